//! Procedural image corpora for tests, demos and desk-scale experiments when
//! no natural-image dataset is at hand.
//!
//! [`textured_corpus`] produces cluttered scenes (gradients, shapes, stripes,
//! checkers, noise) as an unlabeled source of seed patches.
//! [`shape_classes`] produces a labeled 4-class set (disk, square, triangle,
//! cross), each a solid shape at random pose, size and color over a gradient
//! background with at most one small distractor.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::imaging::{Image, LabeledImage};
use crate::rng::{derive_seed, substream, Rng};

pub const SHAPE_CLASSES: usize = 4;

fn random_color(rng: &mut Rng) -> [f32; 3] {
    [rng.random(), rng.random(), rng.random()]
}

fn mix(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

fn gradient_background(rng: &mut Rng, h: usize, w: usize) -> Image {
    let a = random_color(rng);
    let b = random_color(rng);
    let angle: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let (s, c) = angle.sin_cos();
    let norm = (h + w) as f32;
    Image::from_fn(h, w, |y, x| {
        let t = ((x as f32 * c + y as f32 * s) / norm + 0.5).clamp(0.0, 1.0);
        mix(a, b, t)
    })
    .expect("nonzero size")
}

#[derive(Clone, Copy)]
enum Fill {
    Solid([f32; 3]),
    Stripes([f32; 3], [f32; 3], f32, f32),
    Checker([f32; 3], [f32; 3], f32),
}

impl Fill {
    fn random(rng: &mut Rng) -> Fill {
        match rng.random_range(0..3) {
            0 => Fill::Solid(random_color(rng)),
            1 => Fill::Stripes(
                random_color(rng),
                random_color(rng),
                rng.random_range(2.0..6.0),
                rng.random_range(0.0..std::f32::consts::PI),
            ),
            _ => Fill::Checker(random_color(rng), random_color(rng), rng.random_range(2.0..6.0)),
        }
    }

    fn at(&self, y: f32, x: f32) -> [f32; 3] {
        match *self {
            Fill::Solid(c) => c,
            Fill::Stripes(a, b, period, angle) => {
                let t = x * angle.cos() + y * angle.sin();
                if (t / period).floor() as i64 % 2 == 0 {
                    a
                } else {
                    b
                }
            }
            Fill::Checker(a, b, cell) => {
                if ((x / cell).floor() as i64 + (y / cell).floor() as i64) % 2 == 0 {
                    a
                } else {
                    b
                }
            }
        }
    }
}

/// Shape membership in a unit frame centered on the shape (coordinates
/// already rotated and divided by the radius).
fn inside(kind: usize, u: f32, v: f32) -> bool {
    match kind {
        0 => u * u + v * v <= 1.0,
        1 => u.abs() <= 0.8 && v.abs() <= 0.8,
        2 => {
            // upward triangle with vertices (0,-1), (-0.9,0.7), (0.9,0.7)
            (-1.0..=0.7).contains(&v) && u.abs() <= 0.9 * (v + 1.0) / 1.7
        }
        _ => (u.abs() <= 0.28 && v.abs() <= 1.0) || (v.abs() <= 0.28 && u.abs() <= 1.0),
    }
}

fn paint_shape(img: &mut Image, kind: usize, cy: f32, cx: f32, radius: f32, angle: f32, fill: Fill) {
    let (s, c) = angle.sin_cos();
    let h = img.height() as isize;
    let w = img.width() as isize;
    let r = radius.ceil() as isize + 1;
    for y in (cy as isize - r).max(0)..(cy as isize + r + 1).min(h) {
        for x in (cx as isize - r).max(0)..(cx as isize + r + 1).min(w) {
            let dy = y as f32 + 0.5 - cy;
            let dx = x as f32 + 0.5 - cx;
            let u = (dx * c + dy * s) / radius;
            let v = (-dx * s + dy * c) / radius;
            if inside(kind, u, v) {
                img.set(y as usize, x as usize, fill.at(y as f32, x as f32));
            }
        }
    }
}

fn add_noise(rng: &mut Rng, img: &mut Image, sigma: f32) {
    let normal = Normal::new(0.0f32, sigma).expect("positive sigma");
    for v in img.data_mut() {
        *v = (*v + normal.sample(rng)).clamp(0.0, 1.0);
    }
}

/// One cluttered textured scene.
pub fn textured_image(rng: &mut Rng, h: usize, w: usize) -> Image {
    let mut img = gradient_background(rng, h, w);
    let n = rng.random_range(4..10);
    let scale = h.min(w) as f32;
    for _ in 0..n {
        let kind = rng.random_range(0..SHAPE_CLASSES);
        let radius = rng.random_range(0.08..0.3) * scale;
        let cy = rng.random_range(0.0..h as f32);
        let cx = rng.random_range(0.0..w as f32);
        let angle = rng.random_range(0.0..std::f32::consts::TAU);
        let fill = Fill::random(rng);
        paint_shape(&mut img, kind, cy, cx, radius, angle, fill);
    }
    add_noise(rng, &mut img, 0.02);
    img
}

/// `n` textured scenes of `h`x`w`; image `i` uses stream `i` of the seed.
pub fn textured_corpus(n: usize, h: usize, w: usize, seed: u64) -> Vec<Image> {
    let seed = derive_seed(seed, 0x7e47);
    (0..n)
        .map(|i| textured_image(&mut substream(seed, i as u64), h, w))
        .collect()
}

/// One labeled image: a solid shape of class `label` over a gradient.
pub fn shape_image(rng: &mut Rng, label: usize, side: usize) -> Image {
    let mut img = gradient_background(rng, side, side);
    let s = side as f32;
    // at most one small distractor blob
    for _ in 0..rng.random_range(0..2) {
        let kind = rng.random_range(0..SHAPE_CLASSES);
        let fill = Fill::random(rng);
        let r = rng.random_range(0.06..0.14) * s;
        let (cy, cx) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
        paint_shape(&mut img, kind, cy, cx, r, rng.random_range(0.0..std::f32::consts::TAU), fill);
    }
    let radius = rng.random_range(0.22..0.4) * s;
    let cy = rng.random_range(0.35..0.65) * s;
    let cx = rng.random_range(0.35..0.65) * s;
    let angle = rng.random_range(0.0..std::f32::consts::TAU);
    let fill = Fill::Solid(random_color(rng));
    paint_shape(&mut img, label % SHAPE_CLASSES, cy, cx, radius, angle, fill);
    add_noise(rng, &mut img, 0.02);
    img
}

/// `per_class` images for each of the [`SHAPE_CLASSES`] labels, interleaved by
/// class (`0, 1, 2, 3, 0, 1, ...`).
pub fn shape_classes(per_class: usize, side: usize, seed: u64) -> Vec<LabeledImage> {
    let seed = derive_seed(seed, 0x5a9e);
    (0..per_class * SHAPE_CLASSES)
        .map(|i| {
            let label = i % SHAPE_CLASSES;
            LabeledImage {
                image: shape_image(&mut substream(seed, i as u64), label, side),
                label: Some(label as u32),
            }
        })
        .collect()
}
