//! Spatial-pyramid descriptors computed by running a trained network
//! convolutionally over whole images.
//!
//! Response maps are taken after every max-pooling layer and after every
//! hidden fully-connected layer (applied as a convolution whose kernel covers
//! the layer's training-time input, followed by its ReLU when present). Each
//! map is max-pooled over 1x1, 2x2 and 4x4 grids. The descriptor is laid out
//! map by map, then level by level, then cell by cell (row-major), then
//! channel by channel.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{ensure, Error, Result};
use crate::imaging::{resize_bilinear, resize_planar, Image, CHANNELS};
use crate::net::layers::{self, ConvGeom};
use crate::net::{LayerSpec, Network, Tensor4};

pub const PYRAMID_LEVELS: [usize; 3] = [1, 2, 4];
pub const FEATURE_MAGIC: &[u8; 4] = b"EXFT";
pub const FEATURE_VERSION: u32 = 1;

/// Cells of one pyramid level, summed over levels.
pub fn cells_per_map() -> usize {
    PYRAMID_LEVELS.iter().map(|g| g * g).sum()
}

/// `[start, end)` of cell `i` when an axis of length `n` is split into `g`
/// parts. Never empty, even when `g > n`.
pub fn cell_bounds(n: usize, g: usize, i: usize) -> (usize, usize) {
    let start = i * n / g;
    let end = ((i + 1) * n).div_ceil(g);
    (start, end.max(start + 1).min(n))
}

/// Channel counts of the response maps used for descriptors.
pub fn map_channels(net: &Network<f32>) -> Vec<usize> {
    let classifier = classifier_index(net);
    let shapes = net.shapes();
    net.spec()
        .layers
        .iter()
        .enumerate()
        .take(classifier)
        .filter(|(_, l)| matches!(l, LayerSpec::MaxPool { .. } | LayerSpec::FullyConnected { .. }))
        .map(|(i, _)| shapes[i].0)
        .collect()
}

pub fn feature_dim(net: &Network<f32>) -> usize {
    map_channels(net).iter().sum::<usize>() * cells_per_map()
}

fn classifier_index(net: &Network<f32>) -> usize {
    net.spec()
        .layers
        .iter()
        .rposition(|l| matches!(l, LayerSpec::FullyConnected { .. }))
        .expect("validated network ends in a fully-connected layer")
}

/// Upscale so the short side is at least the network's input size.
fn prepare(image: &Image, min_side: usize) -> Result<Image> {
    let (h, w) = (image.height(), image.width());
    let short = h.min(w);
    if short >= min_side {
        return Ok(image.clone());
    }
    let scale = min_side as f64 / short as f64;
    let nh = ((h as f64 * scale).round() as usize).max(min_side);
    let nw = ((w as f64 * scale).round() as usize).max(min_side);
    resize_bilinear(image, nh, nw)
}

/// Response maps of one image, each `1 x c x h x w`.
pub fn response_maps(net: &Network<f32>, image: &Image, pixel_mean: &[f32]) -> Result<Vec<Tensor4<f32>>> {
    let (c, ih, iw) = net.spec().input;
    ensure!(c == CHANNELS, "network expects {c} input channels");
    ensure!(
        pixel_mean.len() == c * ih * iw,
        "pixel mean has {} values, expected {}",
        pixel_mean.len(),
        c * ih * iw
    );
    let img = prepare(image, ih.min(iw))?;
    let (h, w) = (img.height(), img.width());
    let mean = resize_planar(pixel_mean, c, ih, iw, h, w)?;
    let mut x = img.to_planar();
    for (v, m) in x.iter_mut().zip(&mean) {
        *v -= m;
    }
    let mut x = Tensor4::from_vec(1, c, h, w, x)?;

    let classifier = classifier_index(net);
    let spec = net.spec();
    let shapes = net.shapes();
    let mut maps = Vec::new();
    for (i, layer) in spec.layers.iter().enumerate().take(classifier) {
        let p = &net.params.layers[i];
        match *layer {
            LayerSpec::Conv { .. } => {
                let g = net.conv_geom(i, x.h, x.w);
                ensure!(x.h + 2 * g.pad >= g.kh && x.w + 2 * g.pad >= g.kw, "image too small for layer {i}");
                x = layers::conv_forward(&x, &g, &p.weights, &p.bias, false).0;
            }
            LayerSpec::Relu => layers::relu_inplace(&mut x),
            LayerSpec::MaxPool { size } => {
                ensure!(x.h >= size && x.w >= size, "image too small for layer {i}");
                x = layers::maxpool_forward(&x, size).0;
                maps.push(x.clone());
            }
            LayerSpec::FullyConnected { units } => {
                let (tc, th, tw) = if i == 0 { spec.input } else { shapes[i - 1] };
                ensure!(x.c == tc && x.h >= th && x.w >= tw, "image too small for layer {i}");
                let g = ConvGeom {
                    in_c: tc,
                    in_h: x.h,
                    in_w: x.w,
                    out_c: units,
                    kh: th,
                    kw: tw,
                    stride: 1,
                    pad: 0,
                };
                x = layers::conv_forward(&x, &g, &p.weights, &p.bias, false).0;
                if matches!(spec.layers.get(i + 1), Some(LayerSpec::Relu)) {
                    layers::relu_inplace(&mut x);
                }
                maps.push(x.clone());
            }
            LayerSpec::Dropout { .. } => {}
            LayerSpec::Softmax => unreachable!("softmax follows the classifier"),
        }
    }
    Ok(maps)
}

/// Max over every pyramid cell of one map, appended level, cell, channel.
pub fn pyramid_pool(map: &Tensor4<f32>, out: &mut Vec<f32>) {
    let (c, h, w) = (map.c, map.h, map.w);
    for &g in &PYRAMID_LEVELS {
        for cy in 0..g {
            let (y0, y1) = cell_bounds(h, g, cy);
            for cx in 0..g {
                let (x0, x1) = cell_bounds(w, g, cx);
                for ch in 0..c {
                    let plane = &map.data[ch * h * w..(ch + 1) * h * w];
                    let mut best = f32::NEG_INFINITY;
                    for y in y0..y1 {
                        for &v in &plane[y * w + x0..y * w + x1] {
                            best = best.max(v);
                        }
                    }
                    out.push(best);
                }
            }
        }
    }
}

/// Pyramid descriptor of one image. `pixel_mean` is the channel-planar mean
/// subtracted from training patches.
pub fn extract_features(net: &Network<f32>, image: &Image, pixel_mean: &[f32]) -> Result<Vec<f32>> {
    let maps = response_maps(net, image, pixel_mean)?;
    let mut out = Vec::with_capacity(feature_dim(net));
    for map in &maps {
        pyramid_pool(map, &mut out);
    }
    Ok(out)
}

/// [`extract_features`] over many images, in order.
pub fn extract_batch(net: &Network<f32>, images: &[Image], pixel_mean: &[f32]) -> Result<Vec<Vec<f32>>> {
    images.par_iter().map(|img| extract_features(net, img, pixel_mean)).collect()
}

/// Feature vectors with optional labels.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub dim: usize,
    pub rows: Vec<Vec<f32>>,
    pub labels: Option<Vec<u32>>,
}

impl FeatureSet {
    pub fn new(rows: Vec<Vec<f32>>, labels: Option<Vec<u32>>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        ensure!(rows.iter().all(|r| r.len() == dim), "feature rows differ in length");
        if let Some(l) = &labels {
            ensure!(l.len() == rows.len(), "{} labels for {} rows", l.len(), rows.len());
        }
        Ok(FeatureSet { dim, rows, labels })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Binary dump: magic, version, count, dim, label flag (all u32 LE), the rows
/// as f32 LE, then one u32 label per row when the flag is set.
pub fn write_features(set: &FeatureSet, mut w: impl Write) -> Result<()> {
    let io = |e| Error::io("<feature stream>", e);
    w.write_all(FEATURE_MAGIC).map_err(io)?;
    for v in [FEATURE_VERSION, set.len() as u32, set.dim as u32, set.labels.is_some() as u32] {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    for row in &set.rows {
        for v in row {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    if let Some(labels) = &set.labels {
        for l in labels {
            w.write_all(&l.to_le_bytes()).map_err(io)?;
        }
    }
    Ok(())
}

pub fn read_features(mut r: impl Read, origin: &str) -> Result<FeatureSet> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(origin, e))?;
    let bad = |msg: String| Error::format(origin, msg);
    if bytes.len() < 20 || &bytes[..4] != FEATURE_MAGIC {
        return Err(bad("not a feature file".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    if word(0) != FEATURE_VERSION {
        return Err(bad(format!("unsupported version {}", word(0))));
    }
    let (n, dim, has_labels) = (word(1) as usize, word(2) as usize, word(3));
    if has_labels > 1 {
        return Err(bad("bad label flag".into()));
    }
    let expected = 20 + 4 * n * dim + if has_labels == 1 { 4 * n } else { 0 };
    if bytes.len() != expected {
        return Err(bad(format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let floats = &bytes[20..20 + 4 * n * dim];
    let rows = if dim == 0 {
        vec![Vec::new(); n]
    } else {
        floats
            .chunks_exact(4 * dim)
            .map(|row| row.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect())
            .collect()
    };
    let labels = (has_labels == 1).then(|| {
        bytes[20 + 4 * n * dim..]
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .collect()
    });
    Ok(FeatureSet { dim, rows, labels })
}

pub fn save_features(set: &FeatureSet, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_features(set, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_features(path: &Path) -> Result<FeatureSet> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_features(BufReader::new(file), &path.display().to_string())
}

/// One line per row: the label (empty when absent) followed by the values.
pub fn write_features_csv(set: &FeatureSet, mut w: impl Write) -> Result<()> {
    let io = |e| Error::io("<feature csv>", e);
    let header: Vec<String> = std::iter::once("label".to_string())
        .chain((0..set.dim).map(|i| format!("f{i}")))
        .collect();
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for (i, row) in set.rows.iter().enumerate() {
        let label = set.labels.as_ref().map(|l| l[i].to_string()).unwrap_or_default();
        let values: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{label},{}", values.join(",")).map_err(io)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{NetworkSpec, Parameters, WeightInit};
    use crate::rng::substream;
    use crate::synth::textured_image;

    fn trained_like(seed: u64) -> Network<f32> {
        Network::init_with(NetworkSpec::default_for(10), WeightInit::HeNormal, seed).unwrap()
    }

    #[test]
    fn default_dimension() {
        let net = trained_like(0);
        assert_eq!(map_channels(&net), vec![64, 64, 128]);
        assert_eq!(feature_dim(&net), 5376);
    }

    #[test]
    fn cells_cover_axis_and_are_nonempty() {
        for n in 1..40 {
            for &g in &PYRAMID_LEVELS {
                let mut covered = vec![false; n];
                for i in 0..g {
                    let (a, b) = cell_bounds(n, g, i);
                    assert!(a < b && b <= n, "n {n} g {g} i {i}: {a}..{b}");
                    covered[a..b].iter_mut().for_each(|c| *c = true);
                }
                assert!(covered.iter().all(|&c| c));
            }
        }
    }

    #[test]
    fn zero_network_gives_zero_features() {
        let spec = NetworkSpec::default_for(10);
        let net = Network::new(spec, Parameters::zeros(&NetworkSpec::default_for(10)).unwrap()).unwrap();
        let img = textured_image(&mut substream(1, 0), 40, 50);
        let f = extract_features(&net, &img, &vec![0.0; 3 * 32 * 32]).unwrap();
        assert_eq!(f.len(), 5376);
        assert!(f.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn minimal_input_has_constant_fc_cells() {
        let net = trained_like(2);
        let img = textured_image(&mut substream(2, 0), 32, 32);
        let f = extract_features(&net, &img, &vec![0.4; 3 * 32 * 32]).unwrap();
        let fc = &f[(64 + 64) * 21..];
        let first = &fc[..128];
        for cell in fc.chunks_exact(128) {
            assert_eq!(cell, first);
        }
    }

    #[test]
    fn minimal_input_matches_eval_forward() {
        let net = trained_like(3);
        let img = textured_image(&mut substream(3, 0), 32, 32);
        let mean = vec![0.5; 3 * 32 * 32];
        let f = extract_features(&net, &img, &mean).unwrap();
        let mut x = img.to_planar();
        x.iter_mut().zip(&mean).for_each(|(v, m)| *v -= m);
        let pass = net
            .forward(&Tensor4::from_vec(1, 3, 32, 32, x).unwrap(), crate::net::Mode::Eval, &mut substream(0, 0))
            .unwrap();
        let hidden = pass.layer_output(7);
        for (a, b) in f[(64 + 64) * 21..][..128].iter().zip(&hidden.data) {
            assert!((a - b).abs() <= 1e-5 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn small_images_are_upscaled() {
        let net = trained_like(4);
        let img = textured_image(&mut substream(4, 0), 16, 24);
        let f = extract_features(&net, &img, &vec![0.0; 3 * 32 * 32]).unwrap();
        assert_eq!(f.len(), 5376);
        assert!(f.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn batch_matches_single_calls() {
        let net = trained_like(5);
        let mut rng = substream(5, 0);
        let images: Vec<Image> = (0..6).map(|i| textured_image(&mut rng, 32 + 3 * i, 36)).collect();
        let mean = vec![0.3; 3 * 32 * 32];
        let batch = extract_batch(&net, &images, &mean).unwrap();
        for (img, row) in images.iter().zip(&batch) {
            assert_eq!(&extract_features(&net, img, &mean).unwrap(), row);
        }
    }

    #[test]
    fn feature_file_round_trip() {
        let set = FeatureSet::new(vec![vec![1.0, -2.5, 3.0], vec![0.0, 4.0, 5.5]], Some(vec![3, 1])).unwrap();
        let mut buf = Vec::new();
        write_features(&set, &mut buf).unwrap();
        assert_eq!(buf.len(), 20 + 24 + 8);
        assert_eq!(read_features(&buf[..], "mem").unwrap(), set);
        buf.pop();
        assert!(matches!(read_features(&buf[..], "mem"), Err(Error::Format { .. })));
    }

    #[test]
    fn csv_has_header_and_rows() {
        let set = FeatureSet::new(vec![vec![1.0, 2.0]], None).unwrap();
        let mut buf = Vec::new();
        write_features_csv(&set, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "label,f0,f1\n,1,2\n");
    }
}
