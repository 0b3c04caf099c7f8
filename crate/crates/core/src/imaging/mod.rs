//! Raster container, color conversion, resampling, gradient energy and dataset ingestion.
//!
//! [`Image`] stores RGB values in `[0, 1]` as `f32`, row-major with interleaved
//! channels: the value of channel `c` at row `y`, column `x` lives at
//! `data[(y * width + x) * 3 + c]`. Conversion to 8-bit happens only at I/O
//! boundaries.

mod color;
mod dataset;
mod energy;
mod resize;

pub use color::{hsv_to_rgb, hsv_to_rgb_pixel, rgb_to_hsv, rgb_to_hsv_pixel};
pub use dataset::{
    load_dataset_images, load_labeled, select_per_class, write_cifar10, write_stl10, DatasetFormat, LabeledImage,
    CIFAR10_RECORD_LEN, STL10_RECORD_LEN,
};
pub use energy::{gradient_energy, luminance, LUMA_WEIGHTS};
pub use resize::{resize_bilinear, resize_planar};

use crate::error::{ensure, Result};

pub const CHANNELS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    /// Black image.
    pub fn new(height: usize, width: usize) -> Result<Self> {
        ensure!(height >= 1 && width >= 1, "image must be at least 1x1, got {height}x{width}");
        Ok(Image {
            height,
            width,
            data: vec![0.0; height * width * CHANNELS],
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self> {
        let mut img = Image::new(height, width)?;
        for px in img.data.chunks_exact_mut(CHANNELS) {
            px.copy_from_slice(&rgb);
        }
        Ok(img)
    }

    /// Wrap interleaved RGB data. Values are not clamped; callers that ingest
    /// external data should use [`Image::from_u8`].
    pub fn from_vec(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        ensure!(height >= 1 && width >= 1, "image must be at least 1x1, got {height}x{width}");
        ensure!(
            data.len() == height * width * CHANNELS,
            "expected {} values for {height}x{width}x3, got {}",
            height * width * CHANNELS,
            data.len()
        );
        Ok(Image { height, width, data })
    }

    pub fn from_u8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        let data = bytes.iter().map(|&b| f32::from(b) / 255.0).collect();
        Image::from_vec(height, width, data)
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Result<Self> {
        let mut img = Image::new(height, width)?;
        for y in 0..height {
            for x in 0..width {
                img.set(y, x, f(y, x));
            }
        }
        Ok(img)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * CHANNELS;
        self.data[i..i + CHANNELS].copy_from_slice(&rgb);
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Quantize to 8 bits with rounding.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn crop(&self, rect: Rect) -> Result<Image> {
        ensure!(
            rect.fits(self.height, self.width) && !rect.is_empty(),
            "crop {rect:?} outside {}x{} image",
            self.height,
            self.width
        );
        let mut data = Vec::with_capacity(rect.height * rect.width * CHANNELS);
        for y in rect.y..rect.y + rect.height {
            let start = (y * self.width + rect.x) * CHANNELS;
            data.extend_from_slice(&self.data[start..start + rect.width * CHANNELS]);
        }
        Image::from_vec(rect.height, rect.width, data)
    }

    /// Channel-planar copy (`c, y, x` order), the layout used by network tensors.
    pub fn to_planar(&self) -> Vec<f32> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; plane * CHANNELS];
        for (i, px) in self.data.chunks_exact(CHANNELS).enumerate() {
            for c in 0..CHANNELS {
                out[c * plane + i] = px[c];
            }
        }
        out
    }

    pub fn from_planar(height: usize, width: usize, planar: &[f32]) -> Result<Image> {
        let plane = height * width;
        ensure!(planar.len() == plane * CHANNELS, "planar buffer has wrong length");
        let mut data = vec![0.0; plane * CHANNELS];
        for i in 0..plane {
            for c in 0..CHANNELS {
                data[i * CHANNELS + c] = planar[c * plane + i];
            }
        }
        Image::from_vec(height, width, data)
    }
}

/// Single-channel map of unbounded reals.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl GrayMap {
    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Axis-aligned pixel rectangle; `x`/`y` are the top-left corner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        Rect { x, y, width, height }
    }

    pub fn square(x: usize, y: usize, side: usize) -> Self {
        Rect::new(x, y, side, side)
    }

    pub fn full(img: &Image) -> Self {
        Rect::new(0, 0, img.width(), img.height())
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    pub fn fits(&self, height: usize, width: usize) -> bool {
        self.x + self.width <= width && self.y + self.height <= height
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }
}
