use serde::{Deserialize, Serialize};

use super::ColorPCABasis;
use crate::error::{ensure, Result};
use crate::imaging::{hsv_to_rgb_pixel, rgb_to_hsv_pixel, Image};

pub const TRANSLATION_RANGE: (f32, f32) = (-0.25, 0.25);
pub const SCALE_RANGE: (f32, f32) = (0.7, 1.4);
pub const COLOR_RANGE: (f32, f32) = (0.5, 2.0);
pub const CONTRAST_RANGE: (f32, f32) = (0.25, 4.0);

/// Parameters of one composed random transformation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    /// Horizontal shift as a fraction of the patch size.
    pub dx: f32,
    /// Vertical shift as a fraction of the patch size.
    pub dy: f32,
    pub scale: f32,
    /// Multipliers of the projections onto the three color principal components.
    pub color_factors: [f32; 3],
    /// Exponent applied to saturation and value.
    pub contrast_power: f32,
}

impl TransformSpec {
    pub const IDENTITY: TransformSpec = TransformSpec {
        dx: 0.0,
        dy: 0.0,
        scale: 1.0,
        color_factors: [1.0; 3],
        contrast_power: 1.0,
    };

    pub fn is_valid(&self) -> bool {
        let within = |v: f32, (lo, hi): (f32, f32)| v >= lo && v <= hi;
        within(self.dx, TRANSLATION_RANGE)
            && within(self.dy, TRANSLATION_RANGE)
            && within(self.scale, SCALE_RANGE)
            && self.color_factors.iter().all(|&f| within(f, COLOR_RANGE))
            && within(self.contrast_power, CONTRAST_RANGE)
    }

    pub fn to_array(&self) -> [f32; 7] {
        let [c0, c1, c2] = self.color_factors;
        [self.dx, self.dy, self.scale, c0, c1, c2, self.contrast_power]
    }

    pub fn from_array(a: [f32; 7]) -> Self {
        TransformSpec {
            dx: a[0],
            dy: a[1],
            scale: a[2],
            color_factors: [a[3], a[4], a[5]],
            contrast_power: a[6],
        }
    }
}

fn log_uniform(rng: &mut impl rand::Rng, (lo, hi): (f32, f32)) -> f32 {
    let (a, b) = (f64::from(lo).ln(), f64::from(hi).ln());
    let u: f64 = rng.random();
    ((a + (b - a) * u).exp() as f32).clamp(lo, hi)
}

fn uniform(rng: &mut impl rand::Rng, (lo, hi): (f32, f32)) -> f32 {
    let u: f64 = rng.random();
    ((f64::from(lo) + (f64::from(hi) - f64::from(lo)) * u) as f32).clamp(lo, hi)
}

/// Draw each parameter independently: shifts uniformly, the multiplicative
/// parameters log-uniformly so the identity value is the geometric center.
pub fn sample_transform_spec(rng: &mut impl rand::Rng) -> TransformSpec {
    let dx = uniform(rng, TRANSLATION_RANGE);
    let dy = uniform(rng, TRANSLATION_RANGE);
    let scale = log_uniform(rng, SCALE_RANGE);
    let color_factors = [
        log_uniform(rng, COLOR_RANGE),
        log_uniform(rng, COLOR_RANGE),
        log_uniform(rng, COLOR_RANGE),
    ];
    let contrast_power = log_uniform(rng, CONTRAST_RANGE);
    TransformSpec {
        dx,
        dy,
        scale,
        color_factors,
        contrast_power,
    }
}

/// Bilinear sample at fractional index coordinates, clamping to the border.
fn sample_clamped(img: &Image, y: f64, x: f64) -> [f64; 3] {
    let ymax = (img.height() - 1) as f64;
    let xmax = (img.width() - 1) as f64;
    let y = y.clamp(0.0, ymax);
    let x = x.clamp(0.0, xmax);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(img.height() - 1);
    let x1 = (x0 + 1).min(img.width() - 1);
    let fy = y - y0 as f64;
    let fx = x - x0 as f64;
    let (a, b, c, d) = (img.get(y0, x0), img.get(y0, x1), img.get(y1, x0), img.get(y1, x1));
    let mut out = [0.0; 3];
    for k in 0..3 {
        let top = f64::from(a[k]) * (1.0 - fx) + f64::from(b[k]) * fx;
        let bottom = f64::from(c[k]) * (1.0 - fx) + f64::from(d[k]) * fx;
        out[k] = top * (1.0 - fy) + bottom * fy;
    }
    out
}

/// Apply geometric, color and contrast transformations in that order.
///
/// Geometry: output pixel center `o` samples the source at
/// `center + (o - shift - center) / scale`, with edge-clamped bilinear
/// interpolation. Color: `p' = mean + sum_k f_k <p - mean, e_k> e_k` over the
/// principal components `e_k`. Contrast: S and V are raised to
/// `contrast_power` in HSV space. The result is clamped to `[0, 1]`.
pub fn apply_transform(patch: &Image, spec: &TransformSpec, basis: &ColorPCABasis) -> Result<Image> {
    ensure!(
        patch.height() == patch.width(),
        "patch must be square, got {}x{}",
        patch.height(),
        patch.width()
    );
    let size = patch.height() as f64;
    let center = size / 2.0;
    let scale = f64::from(spec.scale);
    let shift_x = f64::from(spec.dx) * size;
    let shift_y = f64::from(spec.dy) * size;
    let factors = spec.color_factors.map(f64::from);
    let power = f64::from(spec.contrast_power);
    let unit_color = factors == [1.0; 3];

    let mut out = Image::new(patch.height(), patch.width())?;
    for oy in 0..patch.height() {
        let sy = center + (oy as f64 + 0.5 - shift_y - center) / scale - 0.5;
        for ox in 0..patch.width() {
            let sx = center + (ox as f64 + 0.5 - shift_x - center) / scale - 0.5;
            let mut p = sample_clamped(patch, sy, sx);

            if !unit_color {
                let d = [p[0] - basis.mean_rgb[0], p[1] - basis.mean_rgb[1], p[2] - basis.mean_rgb[2]];
                let mut q = basis.mean_rgb;
                for (k, comp) in basis.components.iter().enumerate() {
                    let proj = d[0] * comp[0] + d[1] * comp[1] + d[2] * comp[2];
                    for c in 0..3 {
                        q[c] += factors[k] * proj * comp[c];
                    }
                }
                p = q;
            }

            if power != 1.0 {
                let clamped = p.map(|v| v.clamp(0.0, 1.0));
                let [h, s, v] = rgb_to_hsv_pixel(clamped);
                p = hsv_to_rgb_pixel([h, s.powf(power), v.powf(power)]);
            }

            out.set(oy, ox, p.map(|v| v.clamp(0.0, 1.0) as f32));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use crate::synth;
    use proptest::prelude::*;

    fn pca_basis() -> ColorPCABasis {
        let s3 = 1.0 / 3f64.sqrt();
        let s2 = 1.0 / 2f64.sqrt();
        let s6 = 1.0 / 6f64.sqrt();
        ColorPCABasis {
            components: [[s3, s3, s3], [s2, 0.0, -s2], [s6, -2.0 * s6, s6]],
            eigenvalues: [0.05, 0.01, 0.002],
            mean_rgb: [0.45, 0.42, 0.4],
        }
    }

    fn test_patch(seed: u64) -> Image {
        synth::textured_corpus(1, 32, 32, seed).remove(0)
    }

    #[test]
    fn identity_is_fixed_point() {
        let patch = test_patch(1);
        let out = apply_transform(&patch, &TransformSpec::IDENTITY, &pca_basis()).unwrap();
        for (a, b) in patch.data().iter().zip(out.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn unit_color_factors_exact_through_projection() {
        // Force the projection path with factors numerically equal to one.
        let patch = test_patch(2);
        let basis = pca_basis();
        for px in patch.data().chunks_exact(3) {
            let p = [f64::from(px[0]), f64::from(px[1]), f64::from(px[2])];
            let d = [p[0] - basis.mean_rgb[0], p[1] - basis.mean_rgb[1], p[2] - basis.mean_rgb[2]];
            let mut q = basis.mean_rgb;
            for comp in &basis.components {
                let proj = d[0] * comp[0] + d[1] * comp[1] + d[2] * comp[2];
                for c in 0..3 {
                    q[c] += proj * comp[c];
                }
            }
            for c in 0..3 {
                assert!((q[c] - p[c]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn contrast_squares_gray_values() {
        let patch = Image::from_fn(32, 32, |y, x| [((y + x) % 7) as f32 / 6.0; 3]).unwrap();
        let spec = TransformSpec {
            contrast_power: 2.0,
            ..TransformSpec::IDENTITY
        };
        let out = apply_transform(&patch, &spec, &pca_basis()).unwrap();
        for (a, b) in patch.data().iter().zip(out.data()) {
            assert!((a * a - b).abs() < 1e-6, "{a} -> {b}");
        }
        for px in out.data().chunks_exact(3) {
            assert!(px[0] == px[1] && px[1] == px[2]);
        }
    }

    #[test]
    fn pure_translation_shifts_content() {
        // A shift of 0.25 * 32 = 8 pixels to the right: output column x reads source x - 8.
        let patch = Image::from_fn(32, 32, |_, x| [x as f32 / 31.0, 0.5, 0.5]).unwrap();
        let spec = TransformSpec {
            dx: 0.25,
            ..TransformSpec::IDENTITY
        };
        let out = apply_transform(&patch, &spec, &pca_basis()).unwrap();
        assert!((out.get(3, 20)[0] - 12.0 / 31.0).abs() < 1e-6);
        // clamped border
        assert!((out.get(3, 2)[0] - 0.0).abs() < 1e-6);
    }

    #[test]
    fn random_specs_stay_in_range_and_valid() {
        let mut rng = substream(5, 0);
        let patch = test_patch(3);
        let basis = pca_basis();
        for _ in 0..1000 {
            let spec = sample_transform_spec(&mut rng);
            assert!(spec.is_valid(), "{spec:?}");
            let out = apply_transform(&patch, &spec, &basis).unwrap();
            assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn log_uniform_scale_median() {
        let mut rng = substream(9, 0);
        let mut scales: Vec<f32> = (0..100_000).map(|_| sample_transform_spec(&mut rng).scale).collect();
        scales.sort_by(f32::total_cmp);
        let median = f64::from(scales[50_000]);
        let analytic = (0.7f64 * 1.4).sqrt();
        assert!((median - analytic).abs() < 0.01, "{median} vs {analytic}");
        assert!((analytic - 0.9899).abs() < 1e-4);
    }

    #[test]
    fn sampling_is_deterministic() {
        let a: Vec<_> = (0..10).map({
            let mut r = substream(3, 4);
            move |_| sample_transform_spec(&mut r)
        }).collect();
        let b: Vec<_> = (0..10).map({
            let mut r = substream(3, 4);
            move |_| sample_transform_spec(&mut r)
        }).collect();
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn contrast_power_above_one_darkens(power in 1.0f32..4.0, seed in 0u64..1000) {
            let patch = test_patch(seed);
            let spec = TransformSpec { contrast_power: power, ..TransformSpec::IDENTITY };
            let out = apply_transform(&patch, &spec, &pca_basis()).unwrap();
            for (a, b) in patch.data().chunks_exact(3).zip(out.data().chunks_exact(3)) {
                let va = a[0].max(a[1]).max(a[2]);
                let vb = b[0].max(b[1]).max(b[2]);
                prop_assert!(vb <= va + 1e-6);
            }
        }

        #[test]
        fn spec_array_round_trip(dx in -0.25f32..0.25, s in 0.7f32..1.4, p in 0.25f32..4.0) {
            let spec = TransformSpec { dx, dy: -dx, scale: s, color_factors: [0.5, 1.0, 2.0], contrast_power: p };
            prop_assert_eq!(TransformSpec::from_array(spec.to_array()), spec);
        }
    }
}
