
use exemplar::features::{extract_batch, extract_features};
use exemplar::imaging::Image;
use exemplar::net::{Network, NetworkSpec, WeightInit};
use exemplar::rng::substream;
use exemplar::synth::textured_image;
use oracles::{conv_ref, maxpool_ref};
use rand::Rng;

/// Bilinear resize of one plane with half-pixel centers and edge clamping.
fn resize_ref(src: &[f64], h: usize, w: usize, nh: usize, nw: usize) -> Vec<f64> {
    let mut out = vec![0.0; nh * nw];
    for y in 0..nh {
        let sy = ((y as f64 + 0.5) * h as f64 / nh as f64 - 0.5).max(0.0).min((h - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for x in 0..nw {
            let sx = ((x as f64 + 0.5) * w as f64 / nw as f64 - 0.5).max(0.0).min((w - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            let p = |yy: usize, xx: usize| src[yy * w + xx];
            out[y * nw + x] = (1.0 - fy) * ((1.0 - fx) * p(y0, x0) + fx * p(y0, x1)) + fy * ((1.0 - fx) * p(y1, x0) + fx * p(y1, x1));
        }
    }
    out
}

fn relu(v: &mut [f64]) {
    for x in v {
        *x = x.max(0.0);
    }
}

fn pyramid_ref(map: &[f64], c: usize, h: usize, w: usize, out: &mut Vec<f64>) {
    for g in [1usize, 2, 4] {
        for cy in 0..g {
            for cx in 0..g {
                let y0 = cy * h / g;
                let y1 = ((cy + 1) * h + g - 1) / g;
                let x0 = cx * w / g;
                let x1 = ((cx + 1) * w + g - 1) / g;
                for ch in 0..c {
                    let mut m = f64::NEG_INFINITY;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            m = m.max(map[(ch * h + y) * w + x]);
                        }
                    }
                    out.push(m);
                }
            }
        }
    }
}

fn descriptor_ref(net: &Network<f32>, img: &Image, mean: &[f32]) -> Vec<f64> {
    let (h, w) = (img.height(), img.width());
    let p: Vec<(Vec<f64>, Vec<f64>)> = net
        .params
        .layers
        .iter()
        .map(|l| (l.weights.iter().map(|&v| v as f64).collect(), l.bias.iter().map(|&v| v as f64).collect()))
        .collect();
    let mut x = vec![0.0; 3 * h * w];
    for c in 0..3 {
        let plane: Vec<f64> = mean[c * 1024..(c + 1) * 1024].iter().map(|&v| v as f64).collect();
        let m = resize_ref(&plane, 32, 32, h, w);
        for y in 0..h {
            for xx in 0..w {
                x[(c * h + y) * w + xx] = img.get(y, xx)[c] as f64 - m[y * w + xx];
            }
        }
    }
    let mut out = Vec::new();
    let (mut a, h1, w1) = conv_ref(&x, 3, h, w, &p[0].0, &p[0].1, 64, 5, 1, 0);
    relu(&mut a);
    let a = maxpool_ref(&a, 64, h1, w1, 2);
    let (h1, w1) = (h1 / 2, w1 / 2);
    pyramid_ref(&a, 64, h1, w1, &mut out);
    let (mut b, h2, w2) = conv_ref(&a, 64, h1, w1, &p[3].0, &p[3].1, 64, 5, 1, 0);
    relu(&mut b);
    let b = maxpool_ref(&b, 64, h2, w2, 2);
    let (h2, w2) = (h2 / 2, w2 / 2);
    pyramid_ref(&b, 64, h2, w2, &mut out);
    let (mut f, h3, w3) = conv_ref(&b, 64, h2, w2, &p[6].0, &p[6].1, 128, 5, 1, 0);
    relu(&mut f);
    pyramid_ref(&f, 128, h3, w3, &mut out);
    out
}

fn random_net(seed: u64) -> (Network<f32>, Vec<f32>) {
    let net = Network::init_with(NetworkSpec::default_for(10), WeightInit::HeNormal, seed).unwrap();
    let mut rng = substream(seed, 1000);
    let mean = (0..3 * 32 * 32).map(|_| rng.random_range(-0.2f32..0.6)).collect();
    (net, mean)
}

#[test]
fn stl_sized_input_matches_scalar_reference() {
    let (net, mean) = random_net(11);
    let img = textured_image(&mut substream(11, 5), 96, 96);
    let got = extract_features(&net, &img, &mean).unwrap();
    let want = descriptor_ref(&net, &img, &mean);
    assert_eq!(got.len(), 5376);
    assert_eq!(want.len(), 5376);
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (i, (g, w)) in got.iter().zip(&want).enumerate() {
        assert!((*g as f64 - w).abs() <= 1e-5 * scale.max(1.0), "feature {i}: {g} vs {w}");
    }
}

#[test]
fn rectangular_input_matches_scalar_reference() {
    let (net, mean) = random_net(12);
    let img = textured_image(&mut substream(12, 5), 45, 70);
    let got = extract_features(&net, &img, &mean).unwrap();
    let want = descriptor_ref(&net, &img, &mean);
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (i, (g, w)) in got.iter().zip(&want).enumerate() {
        assert!((*g as f64 - w).abs() <= 1e-5 * scale.max(1.0), "feature {i}: {g} vs {w}");
    }
}

#[test]
fn hundred_image_batch_is_bitwise_equal_to_single_calls() {
    let (net, mean) = random_net(13);
    let mut rng = substream(13, 7);
    let images: Vec<Image> = (0..100).map(|_| textured_image(&mut rng, 32, 32)).collect();
    let batch = extract_batch(&net, &images, &mean).unwrap();
    assert_eq!(batch.len(), 100);
    for (img, row) in images.iter().zip(&batch) {
        let single = extract_features(&net, img, &mean).unwrap();
        assert_eq!(single.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), row.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}
