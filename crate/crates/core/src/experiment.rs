//! End-to-end runs: seed patches, surrogate data, network training, pyramid
//! features and SVM evaluation, plus grids over class counts and samples per
//! class and the untrained random-filter baseline.

use std::io::Write;
use std::path::Path;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::augment::{build_surrogate_dataset, fit_color_pca, SurrogateDataset};
use crate::error::{Error, Result};
use crate::features::extract_batch;
use crate::imaging::{Image, LabeledImage};
use crate::net::{Network, NetworkSpec, INIT_STD};
use crate::rng::derive_seed;
use crate::sampler::{sample, SamplerConfig, SeedPatch};
use crate::svm::{cross_validate_c, default_c_grid, evaluate, train_svm, DEFAULT_FOLDS, DEFAULT_STEPS};
use crate::trainer::{train, TrainConfig, TrainLog};

const SAMPLE_TAG: u64 = 11;
const AUGMENT_TAG: u64 = 12;
const TRAIN_TAG: u64 = 13;
const SVM_TAG: u64 = 14;
const BASELINE_TAG: u64 = 15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub c_grid: Vec<f64>,
    pub folds: usize,
    pub steps: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c_grid: default_c_grid(),
            folds: DEFAULT_FOLDS,
            steps: DEFAULT_STEPS,
        }
    }
}

/// Settings shared by every run of a grid; per-run sizes and seeds are
/// supplied separately.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub sampler: SamplerConfig,
    pub train: TrainConfig,
    pub svm: SvmConfig,
}

/// Labeled images for the downstream classification task.
#[derive(Clone, Debug)]
pub struct EvalData {
    pub train: Vec<LabeledImage>,
    pub test: Vec<LabeledImage>,
}

impl EvalData {
    fn split(images: &[LabeledImage]) -> Result<(Vec<Image>, Vec<u32>)> {
        let labels = images
            .iter()
            .map(|li| li.label.ok_or_else(|| Error::contract("evaluation images must be labeled")))
            .collect::<Result<_>>()?;
        Ok((images.iter().map(|li| li.image.clone()).collect(), labels))
    }
}

/// Seed patches for `n_classes` surrogate classes.
pub fn sample_seed_patches(corpus: &[Image], n_classes: usize, cfg: &SamplerConfig, seed: u64) -> Result<Vec<SeedPatch>> {
    let cfg = SamplerConfig {
        n_patches: n_classes,
        rng_seed: derive_seed(seed, SAMPLE_TAG),
        ..cfg.clone()
    };
    let out = sample(corpus, &cfg)?;
    if out.fallback_count > 0 {
        warn!("{} of {n_classes} seed patches fell back to below-threshold energy", out.fallback_count);
    }
    Ok(out.patches)
}

/// Surrogate dataset of `n_classes` x `k` samples drawn from `corpus`.
pub fn build_surrogate(corpus: &[Image], n_classes: usize, k: usize, cfg: &SamplerConfig, seed: u64) -> Result<SurrogateDataset> {
    let patches = sample_seed_patches(corpus, n_classes, cfg, seed)?;
    let basis = fit_color_pca(&patches)?;
    build_surrogate_dataset(&patches, k, &basis, derive_seed(seed, AUGMENT_TAG))
}

/// Channel-planar mean of raw seed patches, used by the untrained baseline.
pub fn patch_mean(patches: &[SeedPatch]) -> Vec<f32> {
    let len = patches.first().map_or(0, |p| p.pixels.data().len());
    let mut sum = vec![0.0f64; len];
    for p in patches {
        for (s, v) in sum.iter_mut().zip(p.pixels.to_planar()) {
            *s += f64::from(v);
        }
    }
    sum.iter().map(|s| (s / patches.len() as f64) as f32).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DownstreamResult {
    pub accuracy: f64,
    pub best_c: f64,
}

/// Pyramid features for both splits, C chosen by cross-validation on the
/// training split, accuracy on the test split.
pub fn downstream_accuracy(net: &Network<f32>, pixel_mean: &[f32], data: &EvalData, cfg: &SvmConfig, seed: u64) -> Result<DownstreamResult> {
    let (train_imgs, train_labels) = EvalData::split(&data.train)?;
    let (test_imgs, test_labels) = EvalData::split(&data.test)?;
    let train_x = extract_batch(net, &train_imgs, pixel_mean)?;
    let test_x = extract_batch(net, &test_imgs, pixel_mean)?;
    let svm_seed = derive_seed(seed, SVM_TAG);
    let cv = cross_validate_c(&train_x, &train_labels, &cfg.c_grid, cfg.folds, cfg.steps, svm_seed)?;
    let model = train_svm(&train_x, &train_labels, cv.best_c, cfg.steps, svm_seed)?;
    Ok(DownstreamResult {
        accuracy: evaluate(&model, &test_x, &test_labels)?,
        best_c: cv.best_c,
    })
}

pub struct RunResult {
    pub net: Network<f32>,
    pub pixel_mean: Vec<f32>,
    pub log: TrainLog,
    pub downstream: Option<DownstreamResult>,
}

/// One full pipeline run with every stage seeded from `seed`.
pub fn run_pipeline(
    corpus: &[Image],
    n_classes: usize,
    k: usize,
    eval: Option<&EvalData>,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<RunResult> {
    let ds = build_surrogate(corpus, n_classes, k, &cfg.sampler, seed)?;
    let tcfg = TrainConfig {
        rng_seed: derive_seed(seed, TRAIN_TAG),
        ..cfg.train.clone()
    };
    let out = train(&NetworkSpec::default_for(n_classes), &ds, &tcfg)?;
    info!(
        "{n_classes} classes x {k}: surrogate validation error {:.4} ({:?})",
        out.log.best_val_err, out.log.status
    );
    let downstream = eval
        .map(|data| downstream_accuracy(&out.net, &ds.pixel_mean, data, &cfg.svm, seed))
        .transpose()?;
    Ok(RunResult {
        net: out.net,
        pixel_mean: ds.pixel_mean,
        log: out.log,
        downstream,
    })
}

/// Untrained network with `Normal(0, 0.001^2)` weights; its mean image is
/// that of `n_patches` raw seed patches.
pub fn random_filter_network(corpus: &[Image], n_patches: usize, cfg: &SamplerConfig, seed: u64) -> Result<(Network<f32>, Vec<f32>)> {
    let patches = sample_seed_patches(corpus, n_patches, cfg, seed)?;
    let net = Network::init(NetworkSpec::default_for(n_patches.max(2)), INIT_STD, derive_seed(seed, BASELINE_TAG))?;
    Ok((net, patch_mean(&patches)))
}

pub fn baseline_accuracy(corpus: &[Image], n_patches: usize, eval: &EvalData, cfg: &PipelineConfig, seed: u64) -> Result<DownstreamResult> {
    let (net, mean) = random_filter_network(corpus, n_patches, &cfg.sampler, seed)?;
    downstream_accuracy(&net, &mean, eval, &cfg.svm, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentGrid {
    pub class_counts: Vec<usize>,
    pub samples_per_class: Vec<usize>,
    pub repeats: usize,
    pub base_seed: u64,
    /// Add a random-filter row (0 samples per class).
    pub include_baseline: bool,
    /// Grid points run concurrently (each point is itself deterministic).
    pub jobs: usize,
}

impl Default for ExperimentGrid {
    fn default() -> Self {
        ExperimentGrid {
            class_counts: vec![50, 100, 250, 500, 1000],
            samples_per_class: vec![1, 4, 8, 16, 32, 64],
            repeats: 3,
            base_seed: 0,
            include_baseline: false,
            jobs: 1,
        }
    }
}

impl ExperimentGrid {
    pub fn validate(&self) -> Result<()> {
        if self.class_counts.is_empty() || self.samples_per_class.is_empty() {
            return Err(Error::Config("experiment grid is empty".into()));
        }
        if self.class_counts.iter().chain(&self.samples_per_class).any(|&v| v == 0) || self.repeats == 0 || self.jobs == 0 {
            return Err(Error::Config("grid entries, repeats and jobs must be positive".into()));
        }
        if self.class_counts.iter().any(|&n| n > 8000) || self.samples_per_class.iter().any(|&k| k > 150) {
            warn!("grid exceeds 8000 classes or 150 samples per class; expect very long runs");
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.repeats as u64).map(|r| self.base_seed + r).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub run_id: u64,
    pub n_classes: usize,
    pub k_samples: usize,
    pub val_error_surrogate: f64,
    pub downstream_accuracy: f64,
    /// Standard deviation of downstream accuracy over repeats.
    pub std: f64,
    pub seeds: Vec<u64>,
    pub status: String,
}

pub const GRID_CSV_HEADER: &str = "run_id,n_classes,k_samples,val_error_surrogate,downstream_accuracy,std,seeds,status";

impl GridRow {
    pub fn csv_line(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        format!(
            "{},{},{},{},{},{},{},{}",
            self.run_id,
            self.n_classes,
            self.k_samples,
            self.val_error_surrogate,
            self.downstream_accuracy,
            self.std,
            seeds.join(";"),
            self.status.replace(',', ";")
        )
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let v = values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, v.sqrt())
}

fn grid_point(corpus: &[Image], eval: &EvalData, n: usize, k: usize, seeds: &[u64], cfg: &PipelineConfig, run_id: u64) -> GridRow {
    let mut val = Vec::new();
    let mut acc = Vec::new();
    let mut failure = None;
    for &seed in seeds {
        let result = if k == 0 {
            baseline_accuracy(corpus, n, eval, cfg, seed).map(|d| (f64::NAN, d.accuracy))
        } else {
            run_pipeline(corpus, n, k, Some(eval), cfg, seed)
                .map(|r| (r.log.best_val_err, r.downstream.expect("evaluation requested").accuracy))
        };
        match result {
            Ok((v, a)) => {
                val.push(v);
                acc.push(a);
            }
            Err(e) => {
                warn!("grid point {n} x {k}, seed {seed} failed: {e}");
                failure = Some(e.to_string());
                break;
            }
        }
    }
    let (acc_mean, acc_std, val_mean) = match failure {
        Some(_) => (f64::NAN, f64::NAN, f64::NAN),
        None => {
            let (m, s) = mean_std(&acc);
            (m, s, mean_std(&val).0)
        }
    };
    GridRow {
        run_id,
        n_classes: n,
        k_samples: k,
        val_error_surrogate: val_mean,
        downstream_accuracy: acc_mean,
        std: acc_std,
        seeds: seeds.to_vec(),
        status: failure.map_or_else(|| "ok".to_string(), |e| format!("failed: {e}")),
    }
}

/// Every `(classes, samples)` combination, averaged over the grid's seeds.
/// A failing point is reported as a failed row and the grid continues.
pub fn run_grid(grid: &ExperimentGrid, corpus: &[Image], eval: &EvalData, cfg: &PipelineConfig, run_id: u64) -> Result<Vec<GridRow>> {
    use rayon::prelude::*;
    grid.validate()?;
    let seeds = grid.seeds();
    let mut points: Vec<(usize, usize)> = Vec::new();
    if grid.include_baseline {
        points.push((*grid.class_counts.iter().max().expect("validated"), 0));
    }
    for &n in &grid.class_counts {
        for &k in &grid.samples_per_class {
            points.push((n, k));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(grid.jobs)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    Ok(pool.install(|| {
        points
            .par_iter()
            .map(|&(n, k)| grid_point(corpus, eval, n, k, &seeds, cfg, run_id))
            .collect()
    }))
}

/// Next free run id in an existing results file (0 for a new file).
pub fn next_run_id(path: &Path) -> Result<u64> {
    if !path.exists() {
        return Ok(0);
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let max = text
        .lines()
        .skip(1)
        .filter_map(|l| l.split(',').next()?.parse::<u64>().ok())
        .max();
    Ok(max.map_or(0, |m| m + 1))
}

/// Append rows, writing the header first when the file is new.
pub fn append_rows(path: &Path, rows: &[GridRow]) -> Result<()> {
    let fresh = !path.exists() || std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    if fresh {
        text.push_str(GRID_CSV_HEADER);
        text.push('\n');
    }
    for r in rows {
        text.push_str(&r.csv_line());
        text.push('\n');
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(run_id: u64) -> GridRow {
        GridRow {
            run_id,
            n_classes: 100,
            k_samples: 4,
            val_error_surrogate: 0.5,
            downstream_accuracy: 0.75,
            std: 0.01,
            seeds: vec![0, 1],
            status: "ok".into(),
        }
    }

    #[test]
    fn csv_append_and_run_ids() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("grid.csv");
        assert_eq!(next_run_id(&p).unwrap(), 0);
        append_rows(&p, &[row(0), row(0)]).unwrap();
        assert_eq!(next_run_id(&p).unwrap(), 1);
        append_rows(&p, &[row(1)]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], GRID_CSV_HEADER);
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[3], "1,100,4,0.5,0.75,0.01,0;1,ok");
    }

    #[test]
    fn grid_validation() {
        assert!(ExperimentGrid::default().validate().is_ok());
        let bad = ExperimentGrid {
            samples_per_class: vec![],
            ..ExperimentGrid::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(ExperimentGrid::default().seeds(), vec![0, 1, 2]);
    }

    #[test]
    fn mean_std_population() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }
}
