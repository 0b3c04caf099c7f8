//! Binary container for surrogate datasets.
//!
//! All integers and floats are little-endian:
//!
//! ```text
//! "EXDS" | version u32 | n_classes u32 | per_class_count u32 | patch_size u32
//! pixel_mean: 3*p*p f32 (channel-planar)
//! per sample: label u32 | 3*p*p f32 (channel-planar)
//! ```
//!
//! The transformation parameters live in a sidecar file (`<path>.specs`) of
//! 7 f32 per sample: dx, dy, scale, three color factors, contrast power.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::{SurrogateDataset, TransformSpec};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"EXDS";
pub const DATASET_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 4;

pub fn specs_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".specs");
    PathBuf::from(s)
}

/// Size in bytes of a dataset file holding `n_samples` patches of `patch_size`.
pub fn dataset_file_size(n_samples: usize, patch_size: usize) -> u64 {
    let floats = 3 * patch_size * patch_size;
    (HEADER_LEN + floats * 4) as u64 + n_samples as u64 * (floats * 4 + 4) as u64
}

fn write_f32s(w: &mut impl Write, values: &[f32]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn save_dataset(ds: &SurrogateDataset, path: &Path) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(DATASET_MAGIC).map_err(io)?;
    for v in [DATASET_VERSION, ds.n_classes as u32, ds.per_class_count as u32, ds.patch_size as u32] {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    write_f32s(&mut w, &ds.pixel_mean).map_err(io)?;
    for i in 0..ds.len() {
        w.write_all(&ds.labels[i].to_le_bytes()).map_err(io)?;
        write_f32s(&mut w, ds.sample(i)).map_err(io)?;
    }
    w.flush().map_err(io)?;

    let sp = specs_path(path);
    let io = |e| Error::io(&sp, e);
    let mut w = BufWriter::new(File::create(&sp).map_err(io)?);
    for spec in &ds.specs {
        write_f32s(&mut w, &spec.to_array()).map_err(io)?;
    }
    w.flush().map_err(io)
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.path, "truncated file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, n: usize, out: &mut Vec<f32>) -> Result<()> {
        let raw = self.take(n * 4)?;
        out.extend(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))));
        Ok(())
    }
}

struct Header {
    n_classes: usize,
    per_class_count: usize,
    patch_size: usize,
    pixel_mean: Vec<f32>,
}

fn parse_header(cur: &mut Cursor<'_>) -> Result<Header> {
    if cur.take(4)? != DATASET_MAGIC {
        return Err(Error::format(cur.path, "bad magic, not a surrogate dataset"));
    }
    let version = cur.u32()?;
    if version != DATASET_VERSION {
        return Err(Error::format(cur.path, format!("unsupported version {version}")));
    }
    let n_classes = cur.u32()? as usize;
    let per_class_count = cur.u32()? as usize;
    let patch_size = cur.u32()? as usize;
    let mut pixel_mean = Vec::new();
    cur.f32s(3 * patch_size * patch_size, &mut pixel_mean)?;
    Ok(Header {
        n_classes,
        per_class_count,
        patch_size,
        pixel_mean,
    })
}

pub fn load_dataset(path: &Path) -> Result<SurrogateDataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor {
        path,
        bytes: &bytes,
        pos: 0,
    };
    let h = parse_header(&mut cur)?;
    let total = h.n_classes * h.per_class_count;
    let expected = dataset_file_size(total, h.patch_size);
    if bytes.len() as u64 != expected {
        return Err(Error::format(
            path,
            format!("expected {expected} bytes for {total} samples, found {}", bytes.len()),
        ));
    }
    let floats = 3 * h.patch_size * h.patch_size;
    let mut samples = Vec::with_capacity(total * floats);
    let mut labels = Vec::with_capacity(total);
    for _ in 0..total {
        let label = cur.u32()?;
        if label as usize >= h.n_classes {
            return Err(Error::format(path, format!("label {label} out of range")));
        }
        labels.push(label);
        cur.f32s(floats, &mut samples)?;
    }

    let sp = specs_path(path);
    let raw = std::fs::read(&sp).map_err(|e| Error::io(&sp, e))?;
    if raw.len() != total * 28 {
        return Err(Error::format(&sp, format!("expected {} spec records", total)));
    }
    let specs = raw
        .chunks_exact(28)
        .map(|rec| {
            let mut a = [0f32; 7];
            for (v, c) in a.iter_mut().zip(rec.chunks_exact(4)) {
                *v = f32::from_le_bytes(c.try_into().expect("4 bytes"));
            }
            TransformSpec::from_array(a)
        })
        .collect();

    Ok(SurrogateDataset {
        n_classes: h.n_classes,
        per_class_count: h.per_class_count,
        patch_size: h.patch_size,
        pixel_mean: h.pixel_mean,
        samples,
        labels,
        specs,
    })
}

/// Read only the header and mean image of a dataset file. Returns
/// `(patch_size, channel-planar mean)`.
pub fn read_dataset_mean(path: &Path) -> Result<(usize, Vec<f32>)> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut head = vec![0u8; HEADER_LEN];
    f.read_exact(&mut head).map_err(|_| Error::format(path, "truncated header"))?;
    let patch = u32::from_le_bytes(head[16..20].try_into().expect("4 bytes")) as usize;
    let mut mean = vec![0u8; 3 * patch * patch * 4];
    f.read_exact(&mut mean).map_err(|_| Error::format(path, "truncated mean image"))?;
    head.extend(mean);
    let mut cur = Cursor {
        path,
        bytes: &head,
        pos: 0,
    };
    let h = parse_header(&mut cur)?;
    Ok((h.patch_size, h.pixel_mean))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{build_surrogate_dataset, fit_color_pca};
    use crate::sampler::{sample, SamplerConfig};
    use crate::synth;

    fn small_dataset() -> SurrogateDataset {
        let images = synth::textured_corpus(4, 64, 64, 2);
        let cfg = SamplerConfig {
            n_patches: 3,
            ..SamplerConfig::default()
        };
        let patches = sample(&images, &cfg).unwrap().patches;
        let basis = fit_color_pca(&patches).unwrap();
        build_surrogate_dataset(&patches, 4, &basis, 5).unwrap()
    }

    #[test]
    fn save_load_round_trip_and_size() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.exds");
        let ds = small_dataset();
        save_dataset(&ds, &path).unwrap();
        let len = std::fs::metadata(&path).unwrap().len();
        assert_eq!(len, dataset_file_size(12, 32));
        assert_eq!(len, 20 + 3072 * 4 + 12 * (3072 * 4 + 4));
        let back = load_dataset(&path).unwrap();
        assert_eq!(back, ds);
        let (p, mean) = read_dataset_mean(&path).unwrap();
        assert_eq!(p, 32);
        assert_eq!(mean, ds.pixel_mean);
    }

    #[test]
    fn full_scale_file_size() {
        // 8000 classes x 150 samples
        let n = 8000 * 150;
        assert_eq!(dataset_file_size(n, 32), 20 + 12288 + 1_200_000 * 12292);
    }

    #[test]
    fn tampered_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.exds");
        save_dataset(&small_dataset(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();

        let bad = dir.path().join("bad.exds");
        std::fs::copy(specs_path(&path), specs_path(&bad)).unwrap();
        bytes[0] = b'X';
        std::fs::write(&bad, &bytes).unwrap();
        assert!(matches!(load_dataset(&bad), Err(Error::Format { .. })));

        bytes[0] = b'E';
        bytes.truncate(bytes.len() - 10);
        std::fs::write(&bad, &bytes).unwrap();
        assert!(matches!(load_dataset(&bad), Err(Error::Format { .. })));
    }
}
