use exemplar::augment::{apply_transform, fit_color_pca, sample_transform_spec, ColorPCABasis, TransformSpec};
use exemplar::imaging::Image;
use exemplar::rng::substream;
use exemplar::sampler::{sample, SamplerConfig};
use exemplar::synth;

/// HSV conversions written the way colorsys does them.
fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let maxc = r.max(g).max(b);
    let minc = r.min(g).min(b);
    let v = maxc;
    if maxc == minc {
        return (0.0, 0.0, v);
    }
    let s = (maxc - minc) / maxc;
    let rc = (maxc - r) / (maxc - minc);
    let gc = (maxc - g) / (maxc - minc);
    let bc = (maxc - b) / (maxc - minc);
    let h = if r == maxc {
        bc - gc
    } else if g == maxc {
        2.0 + rc - bc
    } else {
        4.0 + gc - rc
    };
    ((h / 6.0).rem_euclid(1.0), s, v)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    if s == 0.0 {
        return (v, v, v);
    }
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match (i as i64).rem_euclid(6) {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// Scalar reference: inverse affine map in pixel-center coordinates, bilinear
/// lookup with border clamping, color matrix `M + E^T diag(f) E (p - M)`, then
/// a power on saturation and value.
fn transform_ref(img: &Image, spec: &TransformSpec, basis: &ColorPCABasis) -> Vec<f64> {
    let n = img.height();
    let nf = n as f64;
    let px = |y: usize, x: usize, c: usize| f64::from(img.get(y, x)[c]);
    let mut color = [[0.0f64; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                color[i][j] += basis.components[k][i] * f64::from(spec.color_factors[k]) * basis.components[k][j];
            }
        }
    }
    let mut out = Vec::with_capacity(n * n * 3);
    for oy in 0..n {
        for ox in 0..n {
            // output pixel center in continuous coordinates, then inverse map
            let cy = (oy as f64 + 0.5 - f64::from(spec.dy) * nf - nf / 2.0) / f64::from(spec.scale) + nf / 2.0;
            let cx = (ox as f64 + 0.5 - f64::from(spec.dx) * nf - nf / 2.0) / f64::from(spec.scale) + nf / 2.0;
            let y = (cy - 0.5).clamp(0.0, nf - 1.0);
            let x = (cx - 0.5).clamp(0.0, nf - 1.0);
            let (y0, x0) = (y.floor() as usize, x.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(n - 1), (x0 + 1).min(n - 1));
            let (fy, fx) = (y - y0 as f64, x - x0 as f64);
            let mut rgb = [0.0; 3];
            for c in 0..3 {
                rgb[c] = (1.0 - fy) * ((1.0 - fx) * px(y0, x0, c) + fx * px(y0, x1, c))
                    + fy * ((1.0 - fx) * px(y1, x0, c) + fx * px(y1, x1, c));
            }
            let d: Vec<f64> = (0..3).map(|c| rgb[c] - basis.mean_rgb[c]).collect();
            for c in 0..3 {
                rgb[c] = basis.mean_rgb[c] + (0..3).map(|j| color[c][j] * d[j]).sum::<f64>();
            }
            let [r, g, b] = rgb.map(|v| v.clamp(0.0, 1.0));
            let (h, s, v) = rgb_to_hsv(r, g, b);
            let p = f64::from(spec.contrast_power);
            let (r, g, b) = hsv_to_rgb(h, s.powf(p), v.powf(p));
            out.extend([r, g, b].map(|v| v.clamp(0.0, 1.0)));
        }
    }
    out
}

fn corpus_patches_and_basis() -> (Vec<Image>, ColorPCABasis) {
    let corpus = synth::textured_corpus(20, 64, 64, 8);
    let cfg = SamplerConfig { n_patches: 30, rng_seed: 8, ..SamplerConfig::default() };
    let patches = sample(&corpus, &cfg).unwrap().patches;
    let basis = fit_color_pca(&patches).unwrap();
    (patches.into_iter().map(|p| p.pixels).collect(), basis)
}

#[test]
fn random_transforms_match_scalar_reference() {
    let (patches, basis) = corpus_patches_and_basis();
    let mut rng = substream(77, 0);
    let mut worst = 0.0f64;
    for i in 0..200 {
        let spec = sample_transform_spec(&mut rng);
        let patch = &patches[i % patches.len()];
        let got = apply_transform(patch, &spec, &basis).unwrap();
        let want = transform_ref(patch, &spec, &basis);
        for (a, b) in got.data().iter().zip(&want) {
            worst = worst.max((f64::from(*a) - b).abs());
        }
    }
    assert!(worst < 1e-5, "max abs deviation {worst}");
}

#[test]
fn single_factor_transforms_match_reference() {
    let (patches, basis) = corpus_patches_and_basis();
    let one = |f: fn(&mut TransformSpec)| {
        let mut s = TransformSpec::IDENTITY;
        f(&mut s);
        s
    };
    let specs = [
        one(|s| s.dx = 0.25),
        one(|s| s.dy = -0.25),
        one(|s| s.scale = 0.7),
        one(|s| s.scale = 1.4),
        one(|s| s.color_factors = [2.0, 0.5, 1.0]),
        one(|s| s.contrast_power = 0.25),
        one(|s| s.contrast_power = 4.0),
    ];
    for spec in &specs {
        let got = apply_transform(&patches[0], spec, &basis).unwrap();
        let want = transform_ref(&patches[0], spec, &basis);
        for (a, b) in got.data().iter().zip(&want) {
            assert!((f64::from(*a) - b).abs() < 1e-5, "{spec:?}: {a} vs {b}");
        }
    }
}
