use super::{Image, CHANNELS};
use crate::error::{ensure, Result};

/// Source sample positions for half-pixel-aligned resampling along one axis:
/// `(lower index, upper index, weight of upper)`.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * ratio - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

fn resize_interleaved(data: &[f32], h: usize, w: usize, ch: usize, nh: usize, nw: usize) -> Vec<f32> {
    let ys = axis_taps(h, nh);
    let xs = axis_taps(w, nw);
    let mut out = Vec::with_capacity(nh * nw * ch);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..ch {
                let at = |y: usize, x: usize| f64::from(data[(y * w + x) * ch + c]);
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out.push((top * (1.0 - fy) + bottom * fy) as f32);
            }
        }
    }
    out
}

/// Bilinear resampling with half-pixel-aligned coordinates; the result is
/// clamped to `[0, 1]`.
pub fn resize_bilinear(img: &Image, new_height: usize, new_width: usize) -> Result<Image> {
    ensure!(new_height >= 1 && new_width >= 1, "target size must be at least 1x1");
    if new_height == img.height() && new_width == img.width() {
        return Ok(img.clone());
    }
    let mut data = resize_interleaved(img.data(), img.height(), img.width(), CHANNELS, new_height, new_width);
    for v in &mut data {
        *v = v.clamp(0.0, 1.0);
    }
    Image::from_vec(new_height, new_width, data)
}

/// Unclamped bilinear resampling of a channel-planar buffer (used for mean
/// images, which are not confined to `[0, 1]`).
pub fn resize_planar(data: &[f32], channels: usize, h: usize, w: usize, nh: usize, nw: usize) -> Result<Vec<f32>> {
    ensure!(data.len() == channels * h * w, "planar buffer has wrong length");
    ensure!(h >= 1 && w >= 1 && nh >= 1 && nw >= 1, "sizes must be at least 1x1");
    if h == nh && w == nw {
        return Ok(data.to_vec());
    }
    let mut out = Vec::with_capacity(channels * nh * nw);
    for plane in data.chunks_exact(h * w) {
        out.extend(resize_interleaved(plane, h, w, 1, nh, nw));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_is_identity() {
        let img = Image::from_fn(5, 7, |y, x| [y as f32 / 5.0, x as f32 / 7.0, 0.3]).unwrap();
        assert_eq!(resize_bilinear(&img, 5, 7).unwrap(), img);
    }

    #[test]
    fn constant_stays_constant() {
        let img = Image::filled(2, 2, [0.2, 0.4, 0.6]).unwrap();
        let big = resize_bilinear(&img, 4, 4).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let p = big.get(y, x);
                assert!((p[0] - 0.2).abs() < 1e-7 && (p[1] - 0.4).abs() < 1e-7 && (p[2] - 0.6).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn two_pixel_ramp_upsampled() {
        // Closed form: output pixel i samples source position (i + 0.5) / 2 - 0.5,
        // clamped to [0, 1]; the value equals that position for a 0 -> 1 ramp.
        let oracle = |i: usize| ((i as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, 1.0);
        let img = Image::from_vec(2, 1, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let out = resize_bilinear(&img, 4, 1).unwrap();
        let got: Vec<f32> = (0..4).map(|y| out.get(y, 0)[0]).collect();
        assert_eq!(got, vec![0.0, 0.25, 0.75, 1.0]);
        for (i, g) in got.iter().enumerate() {
            assert!((f64::from(*g) - oracle(i)).abs() < 1e-7);
        }
    }

    #[test]
    fn planar_resize_is_unclamped() {
        let data = vec![-1.0, 3.0];
        let out = resize_planar(&data, 1, 1, 2, 1, 4).unwrap();
        assert_eq!(out, vec![-1.0, 0.0, 2.0, 3.0]);
    }

    #[test]
    fn zero_target_rejected() {
        let img = Image::new(2, 2).unwrap();
        assert!(resize_bilinear(&img, 0, 2).is_err());
    }
}
