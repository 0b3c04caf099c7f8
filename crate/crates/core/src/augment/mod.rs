//! Surrogate-class generation: every seed patch becomes a class made of
//! randomly transformed copies of itself.

mod io;
mod pca;
mod transform;

pub use io::{dataset_file_size, load_dataset, read_dataset_mean, save_dataset, specs_path, DATASET_MAGIC, DATASET_VERSION};
pub use pca::{fit_color_pca, ColorPCABasis};
pub use transform::{
    apply_transform, sample_transform_spec, TransformSpec, COLOR_RANGE, CONTRAST_RANGE, SCALE_RANGE, TRANSLATION_RANGE,
};

use rayon::prelude::*;

use crate::error::{ensure, Result};
use crate::rng::substream;
use crate::sampler::SeedPatch;

/// Labeled, mean-subtracted training set for surrogate classification.
///
/// Samples are stored class-major (the `K` samples of class 0 first), each as
/// a channel-planar `3 x patch_size x patch_size` block of `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateDataset {
    pub n_classes: usize,
    pub per_class_count: usize,
    pub patch_size: usize,
    /// Channel-planar per-pixel mean that was subtracted from every sample.
    pub pixel_mean: Vec<f32>,
    pub samples: Vec<f32>,
    pub labels: Vec<u32>,
    pub specs: Vec<TransformSpec>,
}

impl SurrogateDataset {
    pub fn sample_len(&self) -> usize {
        3 * self.patch_size * self.patch_size
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let n = self.sample_len();
        &self.samples[i * n..(i + 1) * n]
    }

    /// Keep only the given classes, relabeled `0..classes.len()` in the given order.
    pub fn select_classes(&self, classes: &[usize]) -> SurrogateDataset {
        let k = self.per_class_count;
        let n = self.sample_len();
        let mut samples = Vec::with_capacity(classes.len() * k * n);
        let mut labels = Vec::with_capacity(classes.len() * k);
        let mut specs = Vec::with_capacity(classes.len() * k);
        for (new, &old) in classes.iter().enumerate() {
            for i in old * k..(old + 1) * k {
                samples.extend_from_slice(self.sample(i));
                labels.push(new as u32);
                specs.push(self.specs[i]);
            }
        }
        SurrogateDataset {
            n_classes: classes.len(),
            per_class_count: k,
            patch_size: self.patch_size,
            pixel_mean: self.pixel_mean.clone(),
            samples,
            labels,
            specs,
        }
    }
}

/// Generate `k_per_class` samples per seed patch: the untransformed patch
/// followed by `k - 1` random transformations. Class `i` draws its
/// transformations from stream `i` of `rng_seed`. The per-pixel mean over all
/// generated samples is then subtracted.
pub fn build_surrogate_dataset(
    patches: &[SeedPatch],
    k_per_class: usize,
    basis: &ColorPCABasis,
    rng_seed: u64,
) -> Result<SurrogateDataset> {
    ensure!(!patches.is_empty(), "need at least one seed patch");
    ensure!(k_per_class >= 1, "need at least one sample per class");
    let patch_size = patches[0].pixels.height();
    ensure!(
        patches.iter().all(|p| p.pixels.height() == patch_size && p.pixels.width() == patch_size),
        "all seed patches must be {patch_size}x{patch_size}"
    );

    let per_class: Vec<(Vec<f32>, Vec<TransformSpec>)> = patches
        .par_iter()
        .enumerate()
        .map(|(i, patch)| -> Result<_> {
            let mut rng = substream(rng_seed, i as u64);
            let mut data = Vec::with_capacity(k_per_class * 3 * patch_size * patch_size);
            let mut specs = Vec::with_capacity(k_per_class);
            for j in 0..k_per_class {
                let spec = if j == 0 {
                    TransformSpec::IDENTITY
                } else {
                    sample_transform_spec(&mut rng)
                };
                let img = apply_transform(&patch.pixels, &spec, basis)?;
                data.extend(img.to_planar());
                specs.push(spec);
            }
            Ok((data, specs))
        })
        .collect::<Result<_>>()?;

    let sample_len = 3 * patch_size * patch_size;
    let total = patches.len() * k_per_class;
    let mut sum = vec![0.0f64; sample_len];
    for (data, _) in &per_class {
        for sample in data.chunks_exact(sample_len) {
            for (s, &v) in sum.iter_mut().zip(sample) {
                *s += f64::from(v);
            }
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / total as f64).collect();

    let mut samples = Vec::with_capacity(total * sample_len);
    let mut labels = Vec::with_capacity(total);
    let mut specs = Vec::with_capacity(total);
    for (class, (data, class_specs)) in per_class.into_iter().enumerate() {
        for sample in data.chunks_exact(sample_len) {
            samples.extend(sample.iter().zip(&mean).map(|(&v, &m)| (f64::from(v) - m) as f32));
            labels.push(class as u32);
        }
        specs.extend(class_specs);
    }

    Ok(SurrogateDataset {
        n_classes: patches.len(),
        per_class_count: k_per_class,
        patch_size,
        pixel_mean: mean.into_iter().map(|m| m as f32).collect(),
        samples,
        labels,
        specs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Rect;
    use crate::synth;

    fn patches(n: usize) -> Vec<SeedPatch> {
        synth::textured_corpus(n, 32, 32, 17)
            .into_iter()
            .enumerate()
            .map(|(i, pixels)| SeedPatch {
                pixels,
                source_image_index: i,
                source_rect: Rect::square(0, 0, 32),
                source_scale: 1.0,
                energy: 0.0,
                fallback: false,
            })
            .collect()
    }

    #[test]
    fn single_sample_is_its_own_mean() {
        let p = patches(1);
        let ds = build_surrogate_dataset(&p, 1, &ColorPCABasis::identity([0.5; 3]), 0).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.specs[0], TransformSpec::IDENTITY);
        assert!(ds.samples.iter().all(|v| v.abs() < 1e-6));
        let original = p[0].pixels.to_planar();
        for (m, o) in ds.pixel_mean.iter().zip(&original) {
            assert!((m - o).abs() < 1e-6);
        }
    }

    #[test]
    fn class_balance_and_zero_mean() {
        let p = patches(6);
        let basis = fit_color_pca(&p).unwrap();
        let ds = build_surrogate_dataset(&p, 5, &basis, 3).unwrap();
        assert_eq!(ds.len(), 30);
        for c in 0..6u32 {
            assert_eq!(ds.labels.iter().filter(|&&l| l == c).count(), 5);
        }
        let n = ds.sample_len();
        for pos in 0..n {
            let mean: f64 = (0..ds.len()).map(|i| f64::from(ds.sample(i)[pos])).sum::<f64>() / ds.len() as f64;
            assert!(mean.abs() < 1e-5);
        }
        // first member of every class is the seed itself
        for c in 0..6 {
            let first = ds.sample(c * 5);
            let orig = p[c].pixels.to_planar();
            for ((s, m), o) in first.iter().zip(&ds.pixel_mean).zip(&orig) {
                assert!((s + m - o).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn deterministic_and_order_free() {
        let p = patches(4);
        let basis = fit_color_pca(&p).unwrap();
        let a = build_surrogate_dataset(&p, 3, &basis, 8).unwrap();
        let b = build_surrogate_dataset(&p, 3, &basis, 8).unwrap();
        assert_eq!(a, b);
        // class i only depends on stream i
        let sub = build_surrogate_dataset(&p[..2], 3, &basis, 8).unwrap();
        assert_eq!(sub.specs[..], a.specs[..6]);
    }

    #[test]
    fn select_classes_relabels() {
        let p = patches(4);
        let ds = build_surrogate_dataset(&p, 2, &ColorPCABasis::identity([0.5; 3]), 1).unwrap();
        let sub = ds.select_classes(&[3, 1]);
        assert_eq!(sub.labels, vec![0, 0, 1, 1]);
        assert_eq!(sub.sample(0), ds.sample(6));
        assert_eq!(sub.sample(3), ds.sample(3));
    }
}
