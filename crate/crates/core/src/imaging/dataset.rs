use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::warn;

use super::Image;
use crate::error::{Error, Result};

pub const CIFAR10_SIDE: usize = 32;
/// One label byte followed by planar R, G, B planes of 32x32.
pub const CIFAR10_RECORD_LEN: usize = 1 + 3 * CIFAR10_SIDE * CIFAR10_SIDE;
pub const STL10_SIDE: usize = 96;
/// Planar R, G, B planes of 96x96, each plane stored column-major.
pub const STL10_RECORD_LEN: usize = 3 * STL10_SIDE * STL10_SIDE;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DatasetFormat {
    Cifar10Binary,
    Stl10Binary,
    ImageDir,
}

impl FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cifar10-binary" | "cifar10" => Ok(DatasetFormat::Cifar10Binary),
            "stl10-binary" | "stl10" => Ok(DatasetFormat::Stl10Binary),
            "image-dir" => Ok(DatasetFormat::ImageDir),
            other => Err(Error::Config(format!(
                "unknown dataset format {other:?} (expected cifar10-binary, stl10-binary or image-dir)"
            ))),
        }
    }
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetFormat::Cifar10Binary => "cifar10-binary",
            DatasetFormat::Stl10Binary => "stl10-binary",
            DatasetFormat::ImageDir => "image-dir",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub image: Image,
    pub label: Option<u32>,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn check_records(path: &Path, len: usize, record: usize) -> Result<usize> {
    if !len.is_multiple_of(record) {
        return Err(Error::format(
            path,
            format!("length {len} is not a multiple of the {record}-byte record size"),
        ));
    }
    Ok(len / record)
}

fn decode_cifar10(path: &Path, bytes: &[u8]) -> Result<Vec<LabeledImage>> {
    let n = check_records(path, bytes.len(), CIFAR10_RECORD_LEN)?;
    let plane = CIFAR10_SIDE * CIFAR10_SIDE;
    let mut out = Vec::with_capacity(n);
    for rec in bytes.chunks_exact(CIFAR10_RECORD_LEN) {
        let label = u32::from(rec[0]);
        let pixels = &rec[1..];
        let mut interleaved = Vec::with_capacity(3 * plane);
        for i in 0..plane {
            for c in 0..3 {
                interleaved.push(pixels[c * plane + i]);
            }
        }
        out.push(LabeledImage {
            image: Image::from_u8(CIFAR10_SIDE, CIFAR10_SIDE, &interleaved)?,
            label: Some(label),
        });
    }
    Ok(out)
}

/// Sibling label file of an STL-10 image file (`train_X.bin` -> `train_y.bin`).
fn stl10_label_path(path: &Path) -> Option<PathBuf> {
    let name = path.file_name()?.to_str()?;
    let stem = name.strip_suffix("_X.bin")?;
    Some(path.with_file_name(format!("{stem}_y.bin")))
}

fn decode_stl10(path: &Path, bytes: &[u8]) -> Result<Vec<LabeledImage>> {
    let n = check_records(path, bytes.len(), STL10_RECORD_LEN)?;
    let labels = match stl10_label_path(path).filter(|p| p.exists()) {
        Some(lp) => {
            let raw = read(&lp)?;
            if raw.len() != n {
                return Err(Error::format(&lp, format!("{} labels for {n} images", raw.len())));
            }
            // STL-10 labels are 1-based on disk.
            Some(raw.into_iter().map(|b| u32::from(b.saturating_sub(1))).collect::<Vec<_>>())
        }
        None => None,
    };
    let side = STL10_SIDE;
    let plane = side * side;
    let mut out = Vec::with_capacity(n);
    for (k, rec) in bytes.chunks_exact(STL10_RECORD_LEN).enumerate() {
        let mut interleaved = vec![0u8; 3 * plane];
        for c in 0..3 {
            for x in 0..side {
                for y in 0..side {
                    interleaved[(y * side + x) * 3 + c] = rec[c * plane + x * side + y];
                }
            }
        }
        out.push(LabeledImage {
            image: Image::from_u8(side, side, &interleaved)?,
            label: labels.as_ref().map(|l| l[k]),
        });
    }
    Ok(out)
}

fn decode_image_dir(path: &Path) -> Result<Vec<LabeledImage>> {
    let mut entries: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    entries.sort();
    let mut out = Vec::new();
    for file in entries {
        match image::open(&file) {
            Ok(decoded) => {
                let rgb = decoded.to_rgb8();
                let (w, h) = rgb.dimensions();
                out.push(LabeledImage {
                    image: Image::from_u8(h as usize, w as usize, rgb.as_raw())?,
                    label: None,
                });
            }
            Err(e) => warn!("skipping {}: {e}", file.display()),
        }
    }
    if out.is_empty() {
        return Err(Error::NoData(format!("no decodable images in {}", path.display())));
    }
    Ok(out)
}

/// Load every image of a dataset file (or directory for [`DatasetFormat::ImageDir`]).
/// Pixel bytes are mapped to `[0, 1]` by division by 255.
pub fn load_dataset_images(path: &Path, format: DatasetFormat) -> Result<Vec<LabeledImage>> {
    if !path.exists() {
        return Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")));
    }
    match format {
        DatasetFormat::Cifar10Binary => decode_cifar10(path, &read(path)?),
        DatasetFormat::Stl10Binary => decode_stl10(path, &read(path)?),
        DatasetFormat::ImageDir => decode_image_dir(path),
    }
}

/// Concatenate several dataset files of the same format.
pub fn load_labeled(paths: &[PathBuf], format: DatasetFormat) -> Result<Vec<LabeledImage>> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(load_dataset_images(p, format)?);
    }
    Ok(out)
}

/// Serialize 32x32 labeled images as CIFAR-10 records.
pub fn write_cifar10(images: &[LabeledImage], mut w: impl Write) -> Result<()> {
    let plane = CIFAR10_SIDE * CIFAR10_SIDE;
    for li in images {
        if li.image.height() != CIFAR10_SIDE || li.image.width() != CIFAR10_SIDE {
            return Err(Error::contract("CIFAR-10 records must be 32x32"));
        }
        let label = li.label.unwrap_or(0);
        let label = u8::try_from(label).map_err(|_| Error::contract(format!("label {label} does not fit a byte")))?;
        let px = li.image.to_u8();
        let mut rec = Vec::with_capacity(CIFAR10_RECORD_LEN);
        rec.push(label);
        for c in 0..3 {
            rec.extend((0..plane).map(|i| px[i * 3 + c]));
        }
        w.write_all(&rec).map_err(|e| Error::io("<cifar10 writer>", e))?;
    }
    Ok(())
}

/// Serialize 96x96 images as STL-10 image records (labels are not written).
pub fn write_stl10(images: &[Image], mut w: impl Write) -> Result<()> {
    let side = STL10_SIDE;
    let plane = side * side;
    for img in images {
        if img.height() != side || img.width() != side {
            return Err(Error::contract("STL-10 records must be 96x96"));
        }
        let px = img.to_u8();
        let mut rec = vec![0u8; STL10_RECORD_LEN];
        for c in 0..3 {
            for x in 0..side {
                for y in 0..side {
                    rec[c * plane + x * side + y] = px[(y * side + x) * 3 + c];
                }
            }
        }
        w.write_all(&rec).map_err(|e| Error::io("<stl10 writer>", e))?;
    }
    Ok(())
}

/// Keep the first `per_class` images of each wanted label, relabeled to the
/// position of the label in `classes`.
pub fn select_per_class(images: Vec<LabeledImage>, classes: Option<&[u32]>, per_class: Option<usize>) -> Vec<LabeledImage> {
    let mut seen = std::collections::HashMap::new();
    images
        .into_iter()
        .filter_map(|mut li| {
            let label = li.label?;
            if let Some(cs) = classes {
                li.label = Some(cs.iter().position(|&c| c == label)? as u32);
            }
            let count = seen.entry(li.label).or_insert(0usize);
            *count += 1;
            (per_class.is_none_or(|p| *count <= p)).then_some(li)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn select_per_class_relabels_and_caps() {
        let img = Image::new(2, 2).unwrap();
        let items: Vec<LabeledImage> = [3, 5, 3, 7, 3, 5]
            .iter()
            .map(|&l| LabeledImage {
                image: img.clone(),
                label: Some(l),
            })
            .collect();
        let out = select_per_class(items, Some(&[5, 3]), Some(2));
        let labels: Vec<u32> = out.iter().map(|li| li.label.unwrap()).collect();
        assert_eq!(labels, vec![1, 0, 1, 0]);
    }

    fn random_bytes(n: usize, seed: u64) -> Vec<u8> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random()).collect()
    }

    #[test]
    fn cifar_five_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.bin");
        let mut bytes = random_bytes(CIFAR10_RECORD_LEN * 5, 1);
        for k in 0..5 {
            bytes[k * CIFAR10_RECORD_LEN] = k as u8;
        }
        // first red byte of record 0 -> 255
        bytes[1] = 255;
        fs::write(&path, &bytes).unwrap();
        assert_eq!(bytes.len(), 3073 * 5);
        let imgs = load_dataset_images(&path, DatasetFormat::Cifar10Binary).unwrap();
        assert_eq!(imgs.len(), 5);
        assert_eq!(imgs[3].label, Some(3));
        assert_eq!(imgs[0].image.get(0, 0)[0], 1.0);
        assert_eq!(imgs[0].image.height(), 32);
        // green plane starts at byte 1 + 1024
        assert_eq!(imgs[0].image.get(0, 0)[1], f32::from(bytes[1 + 1024]) / 255.0);

        let mut out = Vec::new();
        write_cifar10(&imgs, &mut out).unwrap();
        assert_eq!(out, bytes);
    }

    #[test]
    fn truncated_cifar_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        fs::write(&path, vec![0u8; CIFAR10_RECORD_LEN * 2 + 7]).unwrap();
        let err = load_dataset_images(&path, DatasetFormat::Cifar10Binary).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }

    #[test]
    fn stl_column_major_and_labels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train_X.bin");
        let mut bytes = random_bytes(STL10_RECORD_LEN * 2, 2);
        // red plane, column x=1, row y=0 sits at offset 96
        bytes[96] = 200;
        fs::write(&path, &bytes).unwrap();
        fs::write(dir.path().join("train_y.bin"), [3u8, 10]).unwrap();
        let imgs = load_dataset_images(&path, DatasetFormat::Stl10Binary).unwrap();
        assert_eq!(imgs.len(), 2);
        assert_eq!(imgs[0].image.get(0, 1)[0], 200.0 / 255.0);
        assert_eq!(imgs[0].label, Some(2));
        assert_eq!(imgs[1].label, Some(9));

        let plain: Vec<Image> = imgs.into_iter().map(|l| l.image).collect();
        let mut out = Vec::new();
        write_stl10(&plain, &mut out).unwrap();
        assert_eq!(out, bytes);
    }

    #[test]
    fn unlabeled_stl_has_no_labels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("unlabeled_X.bin");
        fs::write(&path, random_bytes(STL10_RECORD_LEN, 3)).unwrap();
        let imgs = load_dataset_images(&path, DatasetFormat::Stl10Binary).unwrap();
        assert_eq!(imgs[0].label, None);
    }

    #[test]
    fn image_dir_skips_garbage() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("junk.png"), b"not a png").unwrap();
        let buf = image::RgbImage::from_fn(4, 3, |x, y| image::Rgb([(x * 60) as u8, (y * 80) as u8, 255]));
        buf.save(dir.path().join("a.png")).unwrap();
        let imgs = load_dataset_images(dir.path(), DatasetFormat::ImageDir).unwrap();
        assert_eq!(imgs.len(), 1);
        assert_eq!(imgs[0].image.height(), 3);
        assert_eq!(imgs[0].image.width(), 4);
        assert_eq!(imgs[0].image.get(2, 3), [180.0 / 255.0, 160.0 / 255.0, 1.0]);

        let empty = tempfile::tempdir().unwrap();
        fs::write(empty.path().join("junk.jpg"), b"nope").unwrap();
        assert!(matches!(
            load_dataset_images(empty.path(), DatasetFormat::ImageDir),
            Err(Error::NoData(_))
        ));
    }

    #[test]
    fn format_names_parse() {
        for f in [DatasetFormat::Cifar10Binary, DatasetFormat::Stl10Binary, DatasetFormat::ImageDir] {
            assert_eq!(f.to_string().parse::<DatasetFormat>().unwrap(), f);
        }
        assert!("png".parse::<DatasetFormat>().is_err());
    }
}
