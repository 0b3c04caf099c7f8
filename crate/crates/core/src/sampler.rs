//! Seed-patch sampling from unlabeled images at random positions and scales,
//! restricted to regions with high gradient energy.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use log::warn;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{gradient_energy, resize_bilinear, Image, Rect};
use crate::rng::{substream, Rng};

/// Number of random candidate rectangles used to estimate the energy threshold.
pub const THRESHOLD_CANDIDATES: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_patches: usize,
    pub patch_size: usize,
    /// Side of the sampled square as a multiple of `patch_size`.
    pub scale_range: (f64, f64),
    pub energy_percentile: f64,
    pub max_rejections_per_patch: usize,
    pub rng_seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_patches: 1000,
            patch_size: 32,
            scale_range: (1.0, 2.0),
            energy_percentile: 0.7,
            max_rejections_per_patch: 100,
            rng_seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale_range;
        if self.patch_size == 0 || self.n_patches == 0 {
            return Err(Error::Config("patch_size and n_patches must be positive".into()));
        }
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::Config(format!("invalid scale range {lo}..{hi}")));
        }
        if !(0.0..=1.0).contains(&self.energy_percentile) {
            return Err(Error::Config("energy_percentile must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeedPatch {
    pub pixels: Image,
    pub source_image_index: usize,
    pub source_rect: Rect,
    /// Side of the sampled square divided by the patch size.
    pub source_scale: f64,
    pub energy: f64,
    /// True when the slot ran out of attempts and kept its best candidate.
    pub fallback: bool,
}

#[derive(Clone, Debug)]
pub struct SampleOutcome {
    pub patches: Vec<SeedPatch>,
    pub threshold: f64,
    pub fallback_count: usize,
}

/// Indices of images large enough to hold one patch.
fn eligible(images: &[Image], patch: usize) -> Vec<usize> {
    images
        .iter()
        .enumerate()
        .filter(|(_, im)| im.height() >= patch && im.width() >= patch)
        .map(|(i, _)| i)
        .collect()
}

/// Draw one candidate square: uniform image, uniform side in the scale range
/// (clipped to what the image can hold), uniform position.
pub fn draw_candidate(rng: &mut Rng, images: &[Image], eligible: &[usize], cfg: &SamplerConfig) -> (usize, Rect) {
    let idx = eligible[rng.random_range(0..eligible.len())];
    let img = &images[idx];
    let (lo, hi) = cfg.scale_range;
    let u: f64 = rng.random();
    let side_f = (lo + (hi - lo) * u) * cfg.patch_size as f64;
    let max_side = img.height().min(img.width());
    let side = (side_f.round() as usize).clamp(cfg.patch_size, max_side);
    let x = rng.random_range(0..=img.width() - side);
    let y = rng.random_range(0..=img.height() - side);
    (idx, Rect::square(x, y, side))
}

/// Linear-interpolated quantile of an ascending-sorted slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Energy cut-off: the `energy_percentile` quantile of the gradient energies of
/// [`THRESHOLD_CANDIDATES`] random candidate squares (stream 0 of the seed).
pub fn estimate_energy_threshold(images: &[Image], cfg: &SamplerConfig) -> Result<f64> {
    cfg.validate()?;
    let ok = eligible(images, cfg.patch_size);
    if ok.is_empty() {
        return Err(Error::NoData(format!(
            "no image is at least {0}x{0}",
            cfg.patch_size
        )));
    }
    let mut rng = substream(cfg.rng_seed, 0);
    let mut energies = Vec::with_capacity(THRESHOLD_CANDIDATES);
    for _ in 0..THRESHOLD_CANDIDATES {
        let (idx, rect) = draw_candidate(&mut rng, images, &ok, cfg);
        energies.push(gradient_energy(&images[idx], rect)?);
    }
    energies.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&energies, cfg.energy_percentile))
}

/// Sample `cfg.n_patches` seed patches. Slot `s` draws from stream `s + 1` of
/// the seed, so the result does not depend on evaluation order.
pub fn sample_patches(images: &[Image], cfg: &SamplerConfig, threshold: f64) -> Result<SampleOutcome> {
    cfg.validate()?;
    let ok = eligible(images, cfg.patch_size);
    if ok.is_empty() {
        return Err(Error::NoData(format!("no image is at least {0}x{0}", cfg.patch_size)));
    }
    let mut patches = Vec::with_capacity(cfg.n_patches);
    let mut fallback_count = 0;
    for slot in 0..cfg.n_patches {
        let mut rng = substream(cfg.rng_seed, slot as u64 + 1);
        let mut best: Option<(f64, usize, Rect)> = None;
        let mut accepted = None;
        for _ in 0..=cfg.max_rejections_per_patch {
            let (idx, rect) = draw_candidate(&mut rng, images, &ok, cfg);
            let e = gradient_energy(&images[idx], rect)?;
            if e >= threshold {
                accepted = Some((e, idx, rect));
                break;
            }
            if best.is_none_or(|(b, _, _)| e > b) {
                best = Some((e, idx, rect));
            }
        }
        let fallback = accepted.is_none();
        let (energy, idx, rect) = accepted.or(best).expect("at least one candidate drawn");
        if fallback {
            fallback_count += 1;
        }
        let crop = images[idx].crop(rect)?;
        let pixels = resize_bilinear(&crop, cfg.patch_size, cfg.patch_size)?;
        patches.push(SeedPatch {
            pixels,
            source_image_index: idx,
            source_rect: rect,
            source_scale: rect.width as f64 / cfg.patch_size as f64,
            energy,
            fallback,
        });
    }
    if fallback_count > 0 {
        warn!("{fallback_count} of {} patch slots exhausted their rejection budget", cfg.n_patches);
    }
    Ok(SampleOutcome {
        patches,
        threshold,
        fallback_count,
    })
}

/// Estimate the threshold and sample in one call.
pub fn sample(images: &[Image], cfg: &SamplerConfig) -> Result<SampleOutcome> {
    let threshold = estimate_energy_threshold(images, cfg)?;
    sample_patches(images, cfg, threshold)
}

pub const PATCH_MAGIC: &[u8; 4] = b"EXPT";
pub const PATCH_VERSION: u32 = 1;
const PATCH_HEADER_LEN: usize = 4 + 3 * 4 + 8;
const PATCH_META_LEN: usize = 5 * 4 + 2 * 8 + 4;

/// Seed-patch container, little-endian:
///
/// ```text
/// "EXPT" | version u32 | count u32 | patch_size u32 | threshold f64
/// per patch: image u32 | x y width height u32 | scale f64 | energy f64 |
///            fallback u32 | p*p*3 f32 (row-major, interleaved RGB)
/// ```
pub fn write_patches(outcome: &SampleOutcome, patch_size: usize, mut w: impl Write) -> Result<()> {
    let io = |e| Error::io("<patch stream>", e);
    let mut buf = Vec::new();
    buf.extend_from_slice(PATCH_MAGIC);
    for v in [PATCH_VERSION, outcome.patches.len() as u32, patch_size as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&outcome.threshold.to_le_bytes());
    for p in &outcome.patches {
        if p.pixels.height() != patch_size || p.pixels.width() != patch_size {
            return Err(Error::contract("patch size differs from the declared size"));
        }
        let r = p.source_rect;
        for v in [p.source_image_index, r.x, r.y, r.width, r.height] {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
        buf.extend_from_slice(&p.source_scale.to_le_bytes());
        buf.extend_from_slice(&p.energy.to_le_bytes());
        buf.extend_from_slice(&u32::from(p.fallback).to_le_bytes());
        for v in p.pixels.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(io)
}

pub fn read_patches(mut r: impl Read, origin: &str) -> Result<(usize, SampleOutcome)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(origin, e))?;
    let bad = |msg: String| Error::format(origin, msg);
    if bytes.len() < PATCH_HEADER_LEN || &bytes[..4] != PATCH_MAGIC {
        return Err(bad("not a patch file".into()));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let f64_at = |i: usize| f64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
    if u32_at(4) != PATCH_VERSION {
        return Err(bad(format!("unsupported version {}", u32_at(4))));
    }
    let (count, p) = (u32_at(8) as usize, u32_at(12) as usize);
    let threshold = f64_at(16);
    let record = PATCH_META_LEN + 3 * p * p * 4;
    let expected = PATCH_HEADER_LEN + count * record;
    if p == 0 || bytes.len() != expected {
        return Err(bad(format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let mut patches = Vec::with_capacity(count);
    for k in 0..count {
        let o = PATCH_HEADER_LEN + k * record;
        let pixels: Vec<f32> = bytes[o + PATCH_META_LEN..o + record]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let fallback = match u32_at(o + 36) {
            0 => false,
            1 => true,
            v => return Err(bad(format!("patch {k}: bad fallback flag {v}"))),
        };
        patches.push(SeedPatch {
            pixels: Image::from_vec(p, p, pixels)?,
            source_image_index: u32_at(o) as usize,
            source_rect: Rect::new(u32_at(o + 4) as usize, u32_at(o + 8) as usize, u32_at(o + 12) as usize, u32_at(o + 16) as usize),
            source_scale: f64_at(o + 20),
            energy: f64_at(o + 28),
            fallback,
        });
    }
    let fallback_count = patches.iter().filter(|p| p.fallback).count();
    Ok((
        p,
        SampleOutcome {
            patches,
            threshold,
            fallback_count,
        },
    ))
}

pub fn save_patches(outcome: &SampleOutcome, patch_size: usize, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_patches(outcome, patch_size, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_patches(path: &Path) -> Result<(usize, SampleOutcome)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_patches(BufReader::new(file), &path.display().to_string())
}
