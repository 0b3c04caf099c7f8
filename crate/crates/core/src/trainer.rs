//! Surrogate-classification training: mini-batch SGD with momentum, a
//! plateau-triggered learning-rate schedule, and warm-up on a subset of
//! classes for problems with many classes.

use std::io::Write;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::SurrogateDataset;
use crate::error::{Error, Result};
use crate::net::{
    argmax_rows, cross_entropy_loss, init_parameters_with, reinit_layer, save_checkpoint, LayerSpec, Mode, Network,
    NetworkSpec, Parameters, Sgd, Tensor4, WeightInit,
};
use crate::rng::{derive_seed, substream};

const SPLIT_TAG: u64 = 1;
const INIT_TAG: u64 = 2;
const EPOCH_TAG: u64 = 3;
const PRETRAIN_TAG: u64 = 4;
const EVAL_BATCH: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub lr_decay_factor: f64,
    /// Epochs without a new best validation error before the rate is divided.
    pub plateau_patience: usize,
    pub max_lr_drops: usize,
    pub batch_size: usize,
    pub validation_fraction: f64,
    pub momentum: f64,
    pub init: WeightInit,
    /// Hard cap on epochs of the main phase.
    pub max_epochs: usize,
    /// Warm up on a random subset of classes when the dataset has more than
    /// `pretrain_classes` classes.
    pub pretrain: bool,
    pub pretrain_classes: usize,
    /// Warm-up stops once training error is this far below chance.
    pub pretrain_trigger_margin: f64,
    pub pretrain_max_epochs: usize,
    pub rng_seed: u64,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            initial_lr: 0.01,
            lr_decay_factor: 3.0,
            plateau_patience: 3,
            max_lr_drops: 4,
            batch_size: 128,
            validation_fraction: 0.1,
            momentum: 0.9,
            init: WeightInit::HeNormal,
            max_epochs: 60,
            pretrain: true,
            pretrain_classes: 100,
            pretrain_trigger_margin: 0.05,
            pretrain_max_epochs: 30,
            rng_seed: 0,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.initial_lr > 0.0) {
            return bad("initial_lr must be positive");
        }
        if !(self.lr_decay_factor > 1.0) {
            return bad("lr_decay_factor must exceed 1");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 0.5) {
            return bad("validation_fraction must lie in (0, 0.5)");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        self.init.validate()
    }

    /// Learning rate after `drops` reductions.
    pub fn lr_after(&self, drops: usize) -> f64 {
        self.initial_lr / self.lr_decay_factor.powi(drops as i32)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_err: f64,
    /// Absent during warm-up, which has no validation split.
    pub val_err: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TrainStatus {
    /// Stopped after the final plateau.
    Converged,
    EpochCap,
    Diverged(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Epoch numbers after which the learning rate was divided.
    pub lr_drops: Vec<usize>,
    pub pretrain_epochs: Vec<EpochRecord>,
    /// `Some(true)` if warm-up ran and its trigger fired.
    pub pretrain_triggered: Option<bool>,
    pub best_val_err: f64,
    pub status: TrainStatus,
}

impl TrainLog {
    fn new() -> Self {
        TrainLog {
            epochs: Vec::new(),
            lr_drops: Vec::new(),
            pretrain_epochs: Vec::new(),
            pretrain_triggered: None,
            best_val_err: 1.0,
            status: TrainStatus::EpochCap,
        }
    }

    /// First main-phase epoch (1-based) whose training error is below
    /// `chance_err - margin`.
    pub fn epochs_to_below_chance(&self, n_classes: usize, margin: f64) -> Option<usize> {
        let chance = 1.0 - 1.0 / n_classes as f64;
        self.epochs.iter().find(|r| r.train_err < chance - margin).map(|r| r.epoch)
    }

    /// CSV with columns `epoch,lr,train_loss,train_err,val_err` for the main phase.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "epoch,lr,train_loss,train_err,val_err")?;
        for r in &self.epochs {
            writeln!(
                w,
                "{},{:e},{},{},{}",
                r.epoch,
                r.lr,
                r.train_loss,
                r.train_err,
                r.val_err.map(|v| v.to_string()).unwrap_or_default()
            )?;
        }
        Ok(())
    }
}

pub struct TrainOutcome {
    pub net: Network<f32>,
    pub log: TrainLog,
}

/// Stratified split: per class, `ceil(fraction * K)` randomly chosen samples
/// go to validation. With a single sample per class the validation part
/// reuses the training samples.
pub fn split_validation(ds: &SurrogateDataset, fraction: f64, rng_seed: u64) -> (Vec<usize>, Vec<usize>) {
    let k = ds.per_class_count;
    if k < 2 {
        if fraction > 0.0 {
            warn!("one sample per class: validating on the training data");
        }
        let all: Vec<usize> = (0..ds.len()).collect();
        return (all.clone(), all);
    }
    let n_val = ((fraction * k as f64).ceil() as usize).min(k - 1);
    let seed = derive_seed(rng_seed, SPLIT_TAG);
    let mut train = Vec::with_capacity(ds.len());
    let mut val = Vec::with_capacity(ds.n_classes * n_val);
    for class in 0..ds.n_classes {
        let mut idx: Vec<usize> = (class * k..(class + 1) * k).collect();
        idx.shuffle(&mut substream(seed, class as u64));
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    (train, val)
}

fn batch_tensor(ds: &SurrogateDataset, idx: &[usize]) -> (Tensor4<f32>, Vec<u32>) {
    let p = ds.patch_size;
    let mut data = Vec::with_capacity(idx.len() * ds.sample_len());
    let mut labels = Vec::with_capacity(idx.len());
    for &i in idx {
        data.extend_from_slice(ds.sample(i));
        labels.push(ds.labels[i]);
    }
    (
        Tensor4::from_vec(idx.len(), 3, p, p, data).expect("sample length matches patch size"),
        labels,
    )
}

/// Classification error of the network (eval mode) on the given samples.
pub fn error_rate(net: &Network<f32>, ds: &SurrogateDataset, idx: &[usize]) -> Result<f64> {
    if idx.is_empty() {
        return Ok(0.0);
    }
    let mut wrong = 0usize;
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, labels) = batch_tensor(ds, chunk);
        let probs = net.predict_probs(&x)?;
        wrong += argmax_rows(&probs).iter().zip(&labels).filter(|(p, l)| p != l).count();
    }
    Ok(wrong as f64 / idx.len() as f64)
}

struct EpochStats {
    loss: f64,
    err: f64,
}

/// One shuffled pass of mini-batch SGD. Returns `Err(Numerical)` on divergence.
fn run_epoch(
    net: &mut Network<f32>,
    sgd: &mut Sgd<f32>,
    ds: &SurrogateDataset,
    train_idx: &[usize],
    lr: f64,
    batch_size: usize,
    rng: &mut crate::rng::Rng,
) -> Result<EpochStats> {
    let mut order = train_idx.to_vec();
    order.shuffle(rng);
    let mut loss_sum = 0.0;
    let mut wrong = 0usize;
    for chunk in order.chunks(batch_size) {
        let (x, labels) = batch_tensor(ds, chunk);
        let pass = net.forward(&x, Mode::Train, rng)?;
        let loss = cross_entropy_loss(pass.probs(), &labels);
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("non-finite training loss {loss}")));
        }
        loss_sum += loss * chunk.len() as f64;
        wrong += argmax_rows(pass.probs()).iter().zip(&labels).filter(|(p, l)| p != l).count();
        let grads = net.backward(&pass, &labels)?;
        sgd.step(net, &grads, lr)?;
    }
    let n = order.len().max(1) as f64;
    Ok(EpochStats {
        loss: loss_sum / n,
        err: wrong as f64 / n,
    })
}

fn write_checkpoint(cfg: &TrainConfig, net: &Network<f32>, name: &str) -> Result<()> {
    if let Some(dir) = &cfg.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_checkpoint(net, &dir.join(name))?;
    }
    Ok(())
}

/// Train from the given starting network with the plateau schedule: after
/// `plateau_patience` epochs without a new best validation error the learning
/// rate is divided by `lr_decay_factor` and the best parameters so far are
/// restored; after `max_lr_drops` drops the next plateau ends training. The
/// returned network holds the best-validation parameters.
pub fn train_from(mut net: Network<f32>, ds: &SurrogateDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::NoData("empty surrogate dataset".into()));
    }
    if net.n_classes() != ds.n_classes {
        return Err(Error::contract(format!(
            "network has {} outputs but the dataset has {} classes",
            net.n_classes(),
            ds.n_classes
        )));
    }
    let (train_idx, val_idx) = split_validation(ds, cfg.validation_fraction, cfg.rng_seed);
    let mut sgd = Sgd::new(cfg.momentum)?;
    let mut log = TrainLog::new();
    let mut drops = 0usize;
    let mut best_params: Parameters<f32> = net.params.clone();
    let mut best_err = f64::INFINITY;
    let mut since_best = 0usize;
    let epoch_seed = derive_seed(cfg.rng_seed, EPOCH_TAG);

    for epoch in 1..=cfg.max_epochs {
        let lr = cfg.lr_after(drops);
        let mut rng = substream(epoch_seed, epoch as u64);
        let stats = match run_epoch(&mut net, &mut sgd, ds, &train_idx, lr, cfg.batch_size, &mut rng) {
            Ok(s) => s,
            Err(Error::Numerical(msg)) => {
                warn!("training diverged in epoch {epoch}: {msg}");
                log.status = TrainStatus::Diverged(msg);
                break;
            }
            Err(e) => return Err(e),
        };
        let val_err = error_rate(&net, ds, &val_idx)?;
        info!(
            "epoch {epoch}: lr {lr:.3e} loss {:.4} train err {:.4} val err {val_err:.4}",
            stats.loss, stats.err
        );
        log.epochs.push(EpochRecord {
            epoch,
            lr,
            train_loss: stats.loss,
            train_err: stats.err,
            val_err: Some(val_err),
        });

        if val_err < best_err {
            best_err = val_err;
            best_params = net.params.clone();
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= cfg.plateau_patience {
            if drops == cfg.max_lr_drops {
                log.status = TrainStatus::Converged;
                break;
            }
            drops += 1;
            log.lr_drops.push(epoch);
            *net.params_mut() = best_params.clone();
            sgd.reset();
            since_best = 0;
            write_checkpoint(cfg, &net, &format!("drop{drops}.exnw"))?;
        }
    }

    if best_err.is_finite() {
        *net.params_mut() = best_params;
        log.best_val_err = best_err;
    }
    write_checkpoint(cfg, &net, "final.exnw")?;
    Ok(TrainOutcome { net, log })
}

/// Index of the final classifier layer.
fn classifier_layer(spec: &NetworkSpec) -> usize {
    spec.layers
        .iter()
        .rposition(|l| matches!(l, LayerSpec::FullyConnected { .. }))
        .expect("validated network has a classifier")
}

pub struct PretrainResult {
    pub params: Parameters<f32>,
    pub epochs: Vec<EpochRecord>,
    /// `None` when warm-up was skipped.
    pub triggered: Option<bool>,
}

/// Warm-up on `pretrain_classes` random classes at a fixed learning rate,
/// stopping as soon as the epoch training error drops below
/// `chance - pretrain_trigger_margin`. Everything except the classifier is
/// kept; the classifier is re-initialized at full width. With too few
/// classes this returns a fresh initialization.
pub fn pretrain(spec: &NetworkSpec, ds: &SurrogateDataset, cfg: &TrainConfig) -> Result<PretrainResult> {
    cfg.validate()?;
    let init_seed = derive_seed(cfg.rng_seed, INIT_TAG);
    let fresh: Parameters<f32> = init_parameters_with(spec, cfg.init, init_seed)?;
    let m = cfg.pretrain_classes;
    if ds.n_classes <= m || m < 2 {
        return Ok(PretrainResult {
            params: fresh,
            epochs: Vec::new(),
            triggered: None,
        });
    }
    let seed = derive_seed(cfg.rng_seed, PRETRAIN_TAG);
    let mut classes: Vec<usize> = (0..ds.n_classes).collect();
    classes.shuffle(&mut substream(seed, 0));
    classes.truncate(m);
    let subset = ds.select_classes(&classes);
    let sub_spec = spec.with_classes(m);
    let mut net = Network::<f32>::init_with(sub_spec, cfg.init, init_seed)?;
    let mut sgd = Sgd::new(cfg.momentum)?;
    let all: Vec<usize> = (0..subset.len()).collect();
    let threshold = 1.0 - 1.0 / m as f64 - cfg.pretrain_trigger_margin;
    let mut epochs = Vec::new();
    let mut triggered = false;
    for epoch in 1..=cfg.pretrain_max_epochs {
        let mut rng = substream(seed, epoch as u64);
        let stats = run_epoch(&mut net, &mut sgd, &subset, &all, cfg.initial_lr, cfg.batch_size, &mut rng)?;
        info!("pretrain epoch {epoch}: loss {:.4} train err {:.4}", stats.loss, stats.err);
        epochs.push(EpochRecord {
            epoch,
            lr: cfg.initial_lr,
            train_loss: stats.loss,
            train_err: stats.err,
            val_err: None,
        });
        if stats.err < threshold {
            triggered = true;
            break;
        }
    }
    if !triggered {
        warn!("pre-training never reached its trigger; keeping its weights anyway");
    }
    let cls = classifier_layer(spec);
    let mut params = net.params.clone();
    params.layers[cls] = fresh.layers[cls].clone();
    reinit_layer(&mut params, cls, cfg.init, init_seed);
    Ok(PretrainResult {
        params,
        epochs,
        triggered: Some(triggered),
    })
}

/// Full training: optional warm-up followed by [`train_from`].
pub fn train(spec: &NetworkSpec, ds: &SurrogateDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let n = spec.n_classes()?;
    if n != ds.n_classes {
        return Err(Error::contract(format!(
            "network has {n} outputs but the dataset has {} classes",
            ds.n_classes
        )));
    }
    let start = if cfg.pretrain {
        pretrain(spec, ds, cfg)?
    } else {
        PretrainResult {
            params: init_parameters_with(spec, cfg.init, derive_seed(cfg.rng_seed, INIT_TAG))?,
            epochs: Vec::new(),
            triggered: None,
        }
    };
    let net = Network::new(spec.clone(), start.params)?;
    let mut out = train_from(net, ds, cfg)?;
    out.log.pretrain_epochs = start.epochs;
    out.log.pretrain_triggered = start.triggered;
    Ok(out)
}

/// Write the training log as CSV next to other artifacts.
pub fn save_log_csv(log: &TrainLog, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    log.write_csv(&mut f).map_err(|e| Error::io(path, e))
}
