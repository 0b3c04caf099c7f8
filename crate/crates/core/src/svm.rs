//! One-vs-rest linear SVM on standardized features.
//!
//! Each binary problem minimizes `|w|^2 / (2C) + mean hinge loss`, where the
//! bias is carried as an extra constant input and regularized like the
//! weights. The solver is projected stochastic subgradient descent with step
//! `C / t`, drawing example `floor(u * n)` for uniform `u`, and returns the
//! average of the second half of the iterates. The number of steps does not
//! depend on the number of examples, so repeating every example the same
//! number of times leaves the result unchanged.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{ensure, Error, Result};
use crate::rng::substream;

pub const DEFAULT_STEPS: usize = 50_000;
pub const DEFAULT_FOLDS: usize = 5;
pub const MODEL_MAGIC: &[u8; 4] = b"EXSV";
pub const MODEL_VERSION: u32 = 1;

/// `10^-3, 10^-2, ..., 10^3`.
pub fn default_c_grid() -> Vec<f64> {
    (-3..=3).map(|e| 10f64.powi(e)).collect()
}

/// Per-dimension affine normalization `(x - mean) / scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Population mean and standard deviation; dimensions without variance get
    /// scale 1.
    pub fn fit(rows: &[Vec<f32>]) -> Result<Self> {
        ensure!(!rows.is_empty(), "cannot standardize an empty feature set");
        let dim = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0f64; dim];
        for r in rows {
            ensure!(r.len() == dim, "feature rows differ in length");
            for (m, &v) in mean.iter_mut().zip(r) {
                *m += f64::from(v);
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0f64; dim];
        for r in rows {
            for ((s, &v), m) in var.iter_mut().zip(r).zip(&mean) {
                let d = f64::from(v) - m;
                *s += d * d;
            }
        }
        let scale = var
            .iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        ensure!(mean.iter().all(|m| m.is_finite()), "non-finite feature values");
        Ok(Standardizer { mean, scale })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, row: &[f32]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((&v, &m), &s)| (f64::from(v) - m) / s)
            .collect()
    }
}

/// One weight row and bias per class, over standardized inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub classes: Vec<u32>,
    pub weights: Vec<Vec<f32>>,
    pub bias: Vec<f32>,
    pub norm: Standardizer,
}

impl LinearModel {
    pub fn dim(&self) -> usize {
        self.norm.dim()
    }

    /// Score of every class for one raw feature row.
    pub fn scores(&self, row: &[f32]) -> Vec<f64> {
        let x = self.norm.apply(row);
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, &b)| f64::from(b) + w.iter().zip(&x).map(|(&wi, xi)| f64::from(wi) * xi).sum::<f64>())
            .collect()
    }

    /// Label of the highest-scoring class; ties go to the earliest class.
    pub fn predict(&self, row: &[f32]) -> u32 {
        self.classes[argmax_first(&self.scores(row))]
    }

    pub fn predict_all(&self, rows: &[Vec<f32>]) -> Vec<u32> {
        rows.par_iter().map(|r| self.predict(r)).collect()
    }
}

pub fn argmax_first(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// `|w|^2 / (2C) + mean(max(0, 1 - y (w.x + b)))` with `w` including the bias.
pub fn binary_objective(w: &[f64], b: f64, xs: &[Vec<f64>], ys: &[f64], c: f64) -> f64 {
    let reg = (w.iter().map(|v| v * v).sum::<f64>() + b * b) / (2.0 * c);
    let hinge = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (1.0 - y * (b + w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>())).max(0.0))
        .sum::<f64>()
        / xs.len() as f64;
    reg + hinge
}

/// Binary problem with labels in `{-1, +1}`; returns `(w, b)`.
pub fn train_binary(xs: &[Vec<f64>], ys: &[f64], c: f64, steps: usize, seed: u64, stream: u64) -> (Vec<f64>, f64) {
    let dim = xs.first().map_or(0, Vec::len);
    let n = xs.len();
    let lambda = 1.0 / c;
    let radius = c.sqrt();
    let mut rng = substream(seed, stream);
    // `w` is stored as `scale * v` so shrinking costs O(1).
    let mut v = vec![0.0f64; dim + 1];
    let mut scale = 1.0f64;
    let mut sq_norm = 0.0f64;
    let mut avg = vec![0.0f64; dim + 1];
    let avg_from = steps / 2 + 1;
    let mut averaged = 0usize;
    for t in 1..=steps {
        let i = ((rng.random::<f64>() * n as f64) as usize).min(n - 1);
        let x = &xs[i];
        let y = ys[i];
        let margin = y * scale * (v[dim] + v[..dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>());
        let eta = 1.0 / (lambda * t as f64);
        let shrink = 1.0 - eta * lambda;
        if shrink <= 0.0 {
            v.iter_mut().for_each(|a| *a = 0.0);
            scale = 1.0;
            sq_norm = 0.0;
        } else {
            scale *= shrink;
            sq_norm *= shrink * shrink;
        }
        if margin < 1.0 {
            let g = eta * y / scale;
            let mut dot = v[dim];
            let mut xx = 1.0;
            for (a, &b) in v[..dim].iter().zip(x) {
                dot += a * b;
                xx += b * b;
            }
            sq_norm += 2.0 * scale * scale * g * dot + scale * scale * g * g * xx;
            v[dim] += g;
            for (a, &b) in v[..dim].iter_mut().zip(x) {
                *a += g * b;
            }
        }
        let norm = sq_norm.max(0.0).sqrt();
        if norm > radius {
            scale *= radius / norm;
            sq_norm = radius * radius;
        }
        if scale < 1e-100 {
            v.iter_mut().for_each(|a| *a *= scale);
            scale = 1.0;
        }
        if t >= avg_from {
            averaged += 1;
            let k = 1.0 / averaged as f64;
            for (m, &a) in avg.iter_mut().zip(&v) {
                *m += (scale * a - *m) * k;
            }
        }
    }
    let b = avg.pop().unwrap_or(0.0);
    (avg, b)
}

/// Fit a one-vs-rest model. Classes are the sorted distinct labels; class `k`
/// draws from stream `k` of `seed`.
pub fn train_svm(rows: &[Vec<f32>], labels: &[u32], c: f64, steps: usize, seed: u64) -> Result<LinearModel> {
    ensure!(rows.len() == labels.len(), "{} rows but {} labels", rows.len(), labels.len());
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Config(format!("C must be positive, got {c}")));
    }
    ensure!(steps >= 1, "at least one step is required");
    let mut classes: Vec<u32> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    ensure!(classes.len() >= 2, "need at least two classes, found {}", classes.len());
    let norm = Standardizer::fit(rows)?;
    let xs: Vec<Vec<f64>> = rows.iter().map(|r| norm.apply(r)).collect();
    let fitted: Vec<(Vec<f64>, f64)> = classes
        .par_iter()
        .enumerate()
        .map(|(k, &cls)| {
            let ys: Vec<f64> = labels.iter().map(|&l| if l == cls { 1.0 } else { -1.0 }).collect();
            train_binary(&xs, &ys, c, steps, seed, k as u64)
        })
        .collect();
    let (weights, bias): (Vec<Vec<f32>>, Vec<f32>) = fitted
        .into_iter()
        .map(|(w, b)| (w.into_iter().map(|v| v as f32).collect(), b as f32))
        .unzip();
    ensure!(
        weights.iter().flatten().chain(&bias).all(|v| v.is_finite()),
        "SVM produced non-finite weights"
    );
    Ok(LinearModel {
        classes,
        weights,
        bias,
        norm,
    })
}

/// Fraction of rows whose prediction equals the label.
pub fn evaluate(model: &LinearModel, rows: &[Vec<f32>], labels: &[u32]) -> Result<f64> {
    ensure!(rows.len() == labels.len() && !rows.is_empty(), "need matching, non-empty rows and labels");
    Ok(accuracy(&model.predict_all(rows), labels))
}

pub fn accuracy(predicted: &[u32], labels: &[u32]) -> f64 {
    let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len() as f64
}

/// Accuracy restricted to each true class, in ascending label order.
pub fn per_class_accuracy(predicted: &[u32], labels: &[u32]) -> Vec<(u32, f64)> {
    let mut classes: Vec<u32> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    classes
        .into_iter()
        .map(|c| {
            let (mut n, mut hit) = (0usize, 0usize);
            for (p, l) in predicted.iter().zip(labels) {
                if *l == c {
                    n += 1;
                    hit += usize::from(p == l);
                }
            }
            (c, hit as f64 / n as f64)
        })
        .collect()
}

/// Fold index of every example: within each class (in order of appearance,
/// after a seeded shuffle) examples are dealt round-robin.
pub fn stratified_folds(labels: &[u32], folds: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut classes: Vec<u32> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut assignment = vec![0; labels.len()];
    for (k, c) in classes.iter().enumerate() {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == *c).collect();
        idx.shuffle(&mut substream(seed, k as u64));
        for (j, i) in idx.into_iter().enumerate() {
            assignment[i] = j % folds;
        }
    }
    assignment
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvResult {
    pub best_c: f64,
    pub folds: usize,
    /// `(C, mean validation accuracy)` in ascending C order.
    pub scores: Vec<(f64, f64)>,
}

/// Stratified k-fold selection of C by mean accuracy; ties go to the smaller
/// C. Folds shrink (with a warning) when a class has fewer examples than
/// folds.
pub fn cross_validate_c(
    rows: &[Vec<f32>],
    labels: &[u32],
    grid: &[f64],
    folds: usize,
    steps: usize,
    seed: u64,
) -> Result<CvResult> {
    ensure!(!grid.is_empty(), "C grid is empty");
    ensure!(folds >= 2, "need at least two folds");
    ensure!(rows.len() == labels.len(), "{} rows but {} labels", rows.len(), labels.len());
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    if grid.len() == 1 {
        return Ok(CvResult {
            best_c: grid[0],
            folds,
            scores: vec![(grid[0], f64::NAN)],
        });
    }
    let mut counts = std::collections::BTreeMap::new();
    for l in labels {
        *counts.entry(*l).or_insert(0usize) += 1;
    }
    ensure!(counts.len() >= 2, "need at least two classes");
    let smallest = *counts.values().min().expect("non-empty");
    let mut k = folds;
    if smallest < folds {
        k = smallest.max(2);
        log::warn!("smallest class has {smallest} examples; using {k} folds instead of {folds}");
    }
    let assignment = stratified_folds(labels, k, seed);
    let mut scores = Vec::with_capacity(grid.len());
    for &c in &grid {
        let mut total = 0.0;
        for f in 0..k {
            let (mut tr_x, mut tr_y, mut va_x, mut va_y) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for (i, &a) in assignment.iter().enumerate() {
                if a == f {
                    va_x.push(rows[i].clone());
                    va_y.push(labels[i]);
                } else {
                    tr_x.push(rows[i].clone());
                    tr_y.push(labels[i]);
                }
            }
            let model = train_svm(&tr_x, &tr_y, c, steps, seed)?;
            total += evaluate(&model, &va_x, &va_y)?;
        }
        scores.push((c, total / k as f64));
    }
    // Fold means of equal accuracies can differ in the last bit.
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.1 > scores[best].1 + 1e-9 {
            best = i;
        }
    }
    Ok(CvResult {
        best_c: scores[best].0,
        folds: k,
        scores,
    })
}

/// Binary model file: magic, version, class count, dimension (u32 LE), class
/// labels (u32), mean and scale (f64 each), then per class its weight row and
/// bias (f32).
pub fn write_model(model: &LinearModel, mut w: impl Write) -> Result<()> {
    let io = |e| Error::io("<svm model stream>", e);
    let mut buf = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    for v in [MODEL_VERSION, model.classes.len() as u32, model.dim() as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for c in &model.classes {
        buf.extend_from_slice(&c.to_le_bytes());
    }
    for v in model.norm.mean.iter().chain(&model.norm.scale) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for (row, b) in model.weights.iter().zip(&model.bias) {
        for v in row.iter().chain(std::iter::once(b)) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(io)
}

pub fn read_model(mut r: impl Read, origin: &str) -> Result<LinearModel> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(origin, e))?;
    let bad = |msg: String| Error::format(origin, msg);
    if bytes.len() < 16 || &bytes[..4] != MODEL_MAGIC {
        return Err(bad("not an SVM model file".into()));
    }
    let words: Vec<u32> = bytes[4..]
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    if words[0] != MODEL_VERSION {
        return Err(bad(format!("unsupported version {}", words[0])));
    }
    let (k, d) = (words[1] as usize, words[2] as usize);
    let expected = 16 + 4 * k + 16 * d + 4 * k * (d + 1);
    if bytes.len() != expected {
        return Err(bad(format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let stats: Vec<f64> = bytes[16 + 4 * k..16 + 4 * k + 16 * d]
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let norm = Standardizer {
        mean: stats[..d].to_vec(),
        scale: stats[d..].to_vec(),
    };
    let floats: Vec<f32> = bytes[16 + 4 * k + 16 * d..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let (weights, bias) = floats
        .chunks_exact(d + 1)
        .map(|c| (c[..d].to_vec(), c[d]))
        .unzip();
    Ok(LinearModel {
        classes: words[3..3 + k].to_vec(),
        weights,
        bias,
        norm,
    })
}

pub fn save_model(model: &LinearModel, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_model(model, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<LinearModel> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_model(BufReader::new(file), &path.display().to_string())
}
