use super::{GrayMap, Image, Rect};
use crate::error::{ensure, Result};

/// ITU-R BT.601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

pub fn luminance(img: &Image, rect: Rect) -> Result<GrayMap> {
    ensure!(!rect.is_empty(), "empty region {rect:?}");
    ensure!(
        rect.fits(img.height(), img.width()),
        "region {rect:?} outside {}x{} image",
        img.height(),
        img.width()
    );
    let mut data = Vec::with_capacity(rect.area());
    for y in rect.y..rect.y + rect.height {
        for x in rect.x..rect.x + rect.width {
            let p = img.get(y, x);
            data.push(LUMA_WEIGHTS[0] * f64::from(p[0]) + LUMA_WEIGHTS[1] * f64::from(p[1]) + LUMA_WEIGHTS[2] * f64::from(p[2]));
        }
    }
    Ok(GrayMap {
        height: rect.height,
        width: rect.width,
        data,
    })
}

/// Derivative along a line of `n` samples at position `i`: central difference
/// inside, one-sided at both ends, zero for a single sample.
#[inline]
fn derivative(n: usize, i: usize, at: impl Fn(usize) -> f64) -> f64 {
    if n < 2 {
        0.0
    } else if i == 0 {
        at(1) - at(0)
    } else if i == n - 1 {
        at(n - 1) - at(n - 2)
    } else {
        (at(i + 1) - at(i - 1)) * 0.5
    }
}

/// Mean of `|dL/dx| + |dL/dy|` over the region, where `L` is the luminance of
/// the region and derivatives do not look outside it.
pub fn gradient_energy(img: &Image, rect: Rect) -> Result<f64> {
    let lum = luminance(img, rect)?;
    let (h, w) = (lum.height, lum.width);
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..w {
            let dx = derivative(w, x, |xx| lum.get(y, xx));
            let dy = derivative(h, y, |yy| lum.get(yy, x));
            total += dx.abs() + dy.abs();
        }
    }
    Ok(total / (h * w) as f64)
}
