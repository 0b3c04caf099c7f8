use super::Image;

/// Hexcone RGB -> HSV. Hue is a fraction of a full turn in `[0, 1)`; hue of an
/// achromatic pixel is 0.
pub fn rgb_to_hsv_pixel([r, g, b]: [f64; 3]) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    if delta <= 0.0 {
        return [0.0, s, v];
    }
    let sector = if max == r {
        (g - b) / delta
    } else if max == g {
        2.0 + (b - r) / delta
    } else {
        4.0 + (r - g) / delta
    };
    let mut h = sector / 6.0;
    if h < 0.0 {
        h += 1.0;
    }
    if h >= 1.0 {
        h -= 1.0;
    }
    [h, s, v]
}

pub fn hsv_to_rgb_pixel([h, s, v]: [f64; 3]) -> [f64; 3] {
    if s <= 0.0 {
        return [v, v, v];
    }
    let h6 = (h - h.floor()) * 6.0;
    let sector = (h6.floor() as i64).rem_euclid(6);
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn map_pixels(img: &Image, f: impl Fn([f64; 3]) -> [f64; 3]) -> Image {
    let mut out = img.clone();
    for px in out.data_mut().chunks_exact_mut(3) {
        let o = f([f64::from(px[0]), f64::from(px[1]), f64::from(px[2])]);
        for c in 0..3 {
            px[c] = o[c] as f32;
        }
    }
    out
}

/// Per-pixel [`rgb_to_hsv_pixel`]; the result reuses the `Image` container with
/// channels (H, S, V).
pub fn rgb_to_hsv(img: &Image) -> Image {
    map_pixels(img, rgb_to_hsv_pixel)
}

pub fn hsv_to_rgb(img: &Image) -> Image {
    map_pixels(img, hsv_to_rgb_pixel)
}
