//! Command-line front end: one subcommand per pipeline stage plus grid
//! experiments and the random-filter baseline.
//!
//! Every subcommand accepts `--config FILE` with `key = value` lines whose
//! keys are long flag names. Flags given on the command line take precedence
//! over the file, which takes precedence over built-in defaults.
//!
//! Exit status: 0 success, 1 usage or configuration error, 2 data or format
//! error, 3 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;

use exemplar::augment::{build_surrogate_dataset, fit_color_pca, load_dataset, read_dataset_mean, save_dataset, specs_path};
use exemplar::experiment::{
    append_rows, baseline_accuracy, next_run_id, run_grid, EvalData, ExperimentGrid, GridRow, PipelineConfig, SvmConfig,
};
use exemplar::features::{extract_batch, save_features, write_features_csv, FeatureSet, load_features};
use exemplar::imaging::{load_labeled, select_per_class, DatasetFormat, Image};
use exemplar::manifest::{manifest_path, RunManifest};
use exemplar::net::{load_checkpoint, save_checkpoint, NetworkSpec, WeightInit};
use exemplar::sampler::{load_patches, sample, save_patches, SamplerConfig};
use exemplar::svm::{cross_validate_c, evaluate, load_model, per_class_accuracy, save_model, train_svm};
use exemplar::synth;
use exemplar::trainer::{save_log_csv, train, TrainConfig, TrainStatus};
use exemplar::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "exemplar", version, about = "Unsupervised feature learning with surrogate classes")]
struct Cli {
    /// Log level (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    /// Worker threads (1 gives bit-reproducible runs).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
#[command(args_override_self = true)]
enum Command {
    /// Sample seed patches from unlabeled images.
    Sample(SampleArgs),
    /// Expand seed patches into a surrogate dataset.
    Augment(AugmentArgs),
    /// Train the network on a surrogate dataset.
    Train(TrainArgs),
    /// Compute pyramid features of images with a trained network.
    Extract(ExtractArgs),
    /// Fit a one-vs-rest linear SVM on labeled features.
    Svm(SvmArgs),
    /// Evaluate an SVM on labeled features.
    Eval(EvalArgs),
    /// Run a grid over class counts and samples per class.
    Experiment(ExperimentArgs),
    /// Downstream accuracy of untrained random filters.
    Baseline(BaselineArgs),
}

#[derive(Args, Debug, Serialize)]
struct ConfigFile {
    /// `key = value` file of default flag values.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct SampleArgs {
    #[command(flatten)]
    cfg: ConfigFile,
    /// Image source (repeat for several CIFAR batch files).
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    #[arg(long, default_value = "image-dir")]
    format: String,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 1000)]
    n_patches: usize,
    #[arg(long, default_value_t = 32)]
    patch_size: usize,
    #[arg(long, default_value_t = 1.0)]
    scale_min: f64,
    #[arg(long, default_value_t = 2.0)]
    scale_max: f64,
    #[arg(long, default_value_t = 0.7)]
    energy_percentile: f64,
    #[arg(long, default_value_t = 100)]
    max_rejections: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Serialize)]
struct AugmentArgs {
    #[command(flatten)]
    cfg: ConfigFile,
    #[arg(long)]
    patches: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Samples per surrogate class (the first is the untransformed patch).
    #[arg(long, default_value_t = 32)]
    samples_per_class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Clone, Serialize)]
struct TrainFlags {
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 3.0)]
    lr_decay: f64,
    #[arg(long, default_value_t = 3)]
    patience: usize,
    #[arg(long, default_value_t = 4)]
    max_lr_drops: usize,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    validation_fraction: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 60)]
    max_epochs: usize,
    /// Initial weight std; fan-in scaled when omitted.
    #[arg(long)]
    init_std: Option<f64>,
    #[arg(long)]
    no_pretrain: bool,
    #[arg(long, default_value_t = 100)]
    pretrain_classes: usize,
    #[arg(long, default_value_t = 30)]
    pretrain_max_epochs: usize,
}

impl TrainFlags {
    fn config(&self, seed: u64, checkpoint_dir: Option<PathBuf>) -> TrainConfig {
        TrainConfig {
            initial_lr: self.lr,
            lr_decay_factor: self.lr_decay,
            plateau_patience: self.patience,
            max_lr_drops: self.max_lr_drops,
            batch_size: self.batch_size,
            validation_fraction: self.validation_fraction,
            momentum: self.momentum,
            init: self.init_std.map_or(WeightInit::HeNormal, |std| WeightInit::Normal { std }),
            max_epochs: self.max_epochs,
            pretrain: !self.no_pretrain,
            pretrain_classes: self.pretrain_classes,
            pretrain_max_epochs: self.pretrain_max_epochs,
            rng_seed: seed,
            checkpoint_dir,
            ..TrainConfig::default()
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigFile,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Per-epoch CSV log (default: `<output>.log.csv`).
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    #[command(flatten)]
    train: TrainFlags,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Serialize)]
struct ExtractArgs {
    #[command(flatten)]
    cfg: ConfigFile,
    #[arg(long)]
    network: PathBuf,
    /// Surrogate dataset whose pixel mean is subtracted.
    #[arg(long)]
    surrogate: PathBuf,
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    #[arg(long, default_value = "image-dir")]
    format: String,
    #[arg(long)]
    output: PathBuf,
    /// Write CSV instead of the binary dump.
    #[arg(long)]
    csv: bool,
}

#[derive(Args, Debug, Serialize)]
struct SvmFlags {
    /// Comma-separated C values for cross-validation.
    #[arg(long, default_value = "0.001,0.01,0.1,1,10,100,1000")]
    c_grid: String,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = exemplar::svm::DEFAULT_STEPS)]
    svm_steps: usize,
}

impl SvmFlags {
    fn config(&self) -> Result<SvmConfig> {
        Ok(SvmConfig {
            c_grid: parse_list(&self.c_grid, "c-grid")?,
            folds: self.folds,
            steps: self.svm_steps,
        })
    }
}

#[derive(Args, Debug, Serialize)]
struct SvmArgs {
    #[command(flatten)]
    cfg: ConfigFile,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Fixed C (skips cross-validation).
    #[arg(long)]
    c: Option<f64>,
    #[command(flatten)]
    svm: SvmFlags,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    #[command(flatten)]
    cfg: ConfigFile,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    features: PathBuf,
    /// Metrics CSV (`metric,value`).
    #[arg(long)]
    output: PathBuf,
    /// Also report accuracy per class.
    #[arg(long)]
    per_class: bool,
}

#[derive(Args, Debug, Serialize)]
struct DataFlags {
    /// Unlabeled images for seed patches; procedural scenes when omitted.
    #[arg(long)]
    corpus: Vec<PathBuf>,
    #[arg(long, default_value = "image-dir")]
    corpus_format: String,
    /// Labeled training images of the downstream task; procedural shapes when omitted.
    #[arg(long)]
    eval_train: Vec<PathBuf>,
    #[arg(long)]
    eval_test: Vec<PathBuf>,
    #[arg(long, default_value = "cifar10-binary")]
    eval_format: String,
    /// Keep only these labels (comma-separated) of the downstream task.
    #[arg(long)]
    eval_classes: Option<String>,
    /// Keep at most this many training / test images per class.
    #[arg(long)]
    eval_train_per_class: Option<usize>,
    #[arg(long)]
    eval_test_per_class: Option<usize>,
}

impl DataFlags {
    fn corpus(&self) -> Result<Vec<Image>> {
        if self.corpus.is_empty() {
            info!("no corpus given; using 300 procedural 96x96 scenes");
            return Ok(synth::textured_corpus(300, 96, 96, 0));
        }
        let fmt: DatasetFormat = self.corpus_format.parse()?;
        Ok(load_labeled(&self.corpus, fmt)?.into_iter().map(|li| li.image).collect())
    }

    fn eval(&self) -> Result<EvalData> {
        let (train, test) = if self.eval_train.is_empty() && self.eval_test.is_empty() {
            info!("no downstream data given; using the procedural 4-class shape task");
            (synth::shape_classes(100, 32, 1000), synth::shape_classes(200, 32, 2000))
        } else {
            if self.eval_train.is_empty() || self.eval_test.is_empty() {
                return Err(Error::Config("give both --eval-train and --eval-test".into()));
            }
            let fmt: DatasetFormat = self.eval_format.parse()?;
            (load_labeled(&self.eval_train, fmt)?, load_labeled(&self.eval_test, fmt)?)
        };
        let classes = self.eval_classes.as_deref().map(|s| parse_list::<u32>(s, "eval-classes")).transpose()?;
        Ok(EvalData {
            train: select_per_class(train, classes.as_deref(), self.eval_train_per_class),
            test: select_per_class(test, classes.as_deref(), self.eval_test_per_class),
        })
    }
}

#[derive(Args, Debug, Serialize)]
struct ExperimentArgs {
    #[command(flatten)]
    cfg: ConfigFile,
    #[arg(long, default_value = "50,100,250,500,1000")]
    classes: String,
    #[arg(long, default_value = "1,4,8,16,32,64")]
    samples: String,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    /// Add a random-filter row (0 samples per class).
    #[arg(long)]
    baseline: bool,
    /// Grid points run concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    data: DataFlags,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    svm: SvmFlags,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Serialize)]
struct BaselineArgs {
    #[command(flatten)]
    cfg: ConfigFile,
    /// Seed patches used for the mean image.
    #[arg(long, default_value_t = 100)]
    n_patches: usize,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    data: DataFlags,
    #[command(flatten)]
    svm: SvmFlags,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|v| v.trim().parse().map_err(|_| Error::Config(format!("bad --{what} entry {v:?}"))))
        .collect()
}

const SUBCOMMANDS: [&str; 8] = ["sample", "augment", "train", "extract", "svm", "eval", "experiment", "baseline"];

/// Expand `--config FILE` into flags placed right after the subcommand so
/// that later command-line flags override them.
fn expand_config(args: Vec<String>) -> std::result::Result<Vec<String>, String> {
    let Some(pos) = args.iter().position(|a| a == "--config" || a.starts_with("--config=")) else {
        return Ok(args);
    };
    let path = if let Some(v) = args[pos].strip_prefix("--config=") {
        v.to_string()
    } else {
        args.get(pos + 1).cloned().ok_or("--config needs a file")?
    };
    let text = std::fs::read_to_string(&path).map_err(|e| format!("cannot read config {path}: {e}"))?;
    let mut injected = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("{path}:{}: expected key = value", n + 1))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        match value {
            "true" => injected.push(format!("--{key}")),
            "false" => {}
            _ => {
                injected.push(format!("--{key}"));
                injected.push(value.to_string());
            }
        }
    }
    let sub = args
        .iter()
        .position(|a| SUBCOMMANDS.contains(&a.as_str()))
        .map_or(args.len(), |i| i + 1);
    let mut out = args[..sub].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[sub..]);
    Ok(out)
}

/// Paths written by a command; removed unless the command succeeds.
struct Outputs(Vec<PathBuf>);

impl Outputs {
    fn add(&mut self, p: impl Into<PathBuf>) -> PathBuf {
        let p = p.into();
        self.0.push(p.clone());
        p
    }

    fn discard(&self) {
        for p in &self.0 {
            if p.exists() {
                let _ = std::fs::remove_file(p);
            }
        }
    }
}

fn write_manifest<C: Serialize>(out: &mut Outputs, command: &str, seed: u64, cfg: &C, inputs: &[&Path], outputs: &[&Path]) -> Result<()> {
    let mut m = RunManifest::new(command, seed, cfg)?;
    for p in inputs {
        if p.is_file() {
            m.input(p)?;
        }
    }
    for p in outputs {
        m.output(p)?;
    }
    let path = out.add(manifest_path(outputs[0]));
    m.save(&path)
}

fn cmd_sample(a: &SampleArgs, out: &mut Outputs) -> Result<()> {
    let fmt: DatasetFormat = a.format.parse()?;
    let images: Vec<Image> = load_labeled(&a.input, fmt)?.into_iter().map(|li| li.image).collect();
    let cfg = SamplerConfig {
        n_patches: a.n_patches,
        patch_size: a.patch_size,
        scale_range: (a.scale_min, a.scale_max),
        energy_percentile: a.energy_percentile,
        max_rejections_per_patch: a.max_rejections,
        rng_seed: a.seed,
    };
    let outcome = sample(&images, &cfg)?;
    info!(
        "{} patches from {} images (threshold {:.5}, {} fallbacks)",
        outcome.patches.len(),
        images.len(),
        outcome.threshold,
        outcome.fallback_count
    );
    save_patches(&outcome, a.patch_size, &out.add(&a.output))?;
    let inputs: Vec<&Path> = a.input.iter().map(PathBuf::as_path).collect();
    write_manifest(out, "sample", a.seed, a, &inputs, &[&a.output])
}

fn cmd_augment(a: &AugmentArgs, out: &mut Outputs) -> Result<()> {
    let (_, outcome) = load_patches(&a.patches)?;
    let basis = fit_color_pca(&outcome.patches)?;
    let ds = build_surrogate_dataset(&outcome.patches, a.samples_per_class, &basis, a.seed)?;
    out.add(specs_path(&a.output));
    save_dataset(&ds, &out.add(&a.output))?;
    info!("{} classes x {} samples", ds.n_classes, ds.per_class_count);
    write_manifest(out, "augment", a.seed, a, &[&a.patches], &[&a.output, &specs_path(&a.output)])
}

fn cmd_train(a: &TrainArgs, out: &mut Outputs) -> Result<()> {
    let ds = load_dataset(&a.dataset)?;
    let cfg = a.train.config(a.seed, a.checkpoint_dir.clone());
    let result = train(&NetworkSpec::default_for(ds.n_classes), &ds, &cfg)?;
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut s = a.output.as_os_str().to_owned();
        s.push(".log.csv");
        PathBuf::from(s)
    });
    save_log_csv(&result.log, &log_path)?;
    if let TrainStatus::Diverged(msg) = &result.log.status {
        return Err(Error::Numerical(format!("training diverged: {msg} (log kept at {})", log_path.display())));
    }
    out.add(&log_path);
    save_checkpoint(&result.net, &out.add(&a.output))?;
    info!("best surrogate validation error {:.4}", result.log.best_val_err);
    write_manifest(out, "train", a.seed, a, &[&a.dataset], &[&a.output, &log_path])
}

fn cmd_extract(a: &ExtractArgs, out: &mut Outputs) -> Result<()> {
    let net = load_checkpoint::<f32>(&a.network)?;
    let (_, mean) = read_dataset_mean(&a.surrogate)?;
    let fmt: DatasetFormat = a.format.parse()?;
    let images = load_labeled(&a.input, fmt)?;
    let labels: Option<Vec<u32>> = images.iter().map(|li| li.label).collect();
    let rows = extract_batch(&net, &images.into_iter().map(|li| li.image).collect::<Vec<_>>(), &mean)?;
    let set = FeatureSet::new(rows, labels)?;
    let path = out.add(&a.output);
    if a.csv {
        let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_features_csv(&set, std::io::BufWriter::new(f))?;
    } else {
        save_features(&set, &path)?;
    }
    info!("{} feature vectors of dimension {}", set.len(), set.dim);
    let mut inputs: Vec<&Path> = vec![&a.network, &a.surrogate];
    inputs.extend(a.input.iter().map(PathBuf::as_path));
    write_manifest(out, "extract", 0, a, &inputs, &[&a.output])
}

fn labeled(set: FeatureSet, path: &Path) -> Result<(Vec<Vec<f32>>, Vec<u32>)> {
    let labels = set
        .labels
        .ok_or_else(|| Error::format(path, "feature file carries no labels"))?;
    Ok((set.rows, labels))
}

fn cmd_svm(a: &SvmArgs, out: &mut Outputs) -> Result<()> {
    let (rows, labels) = labeled(load_features(&a.features)?, &a.features)?;
    let cfg = a.svm.config()?;
    let c = match a.c {
        Some(c) => c,
        None => {
            let cv = cross_validate_c(&rows, &labels, &cfg.c_grid, cfg.folds, cfg.steps, a.seed)?;
            for (c, acc) in &cv.scores {
                info!("C {c}: cross-validated accuracy {acc:.4}");
            }
            cv.best_c
        }
    };
    let model = train_svm(&rows, &labels, c, cfg.steps, a.seed)?;
    info!("C {c}: training accuracy {:.4}", evaluate(&model, &rows, &labels)?);
    save_model(&model, &out.add(&a.output))?;
    write_manifest(out, "svm", a.seed, a, &[&a.features], &[&a.output])
}

fn cmd_eval(a: &EvalArgs, out: &mut Outputs) -> Result<()> {
    let model = load_model(&a.model)?;
    let (rows, labels) = labeled(load_features(&a.features)?, &a.features)?;
    if rows.first().is_some_and(|r| r.len() != model.dim()) {
        return Err(Error::format(&a.features, format!("features have the wrong dimension for {}", a.model.display())));
    }
    let pred = model.predict_all(&rows);
    let acc = evaluate(&model, &rows, &labels)?;
    let mut text = format!("metric,value\naccuracy,{acc}\nn,{}\n", labels.len());
    if a.per_class {
        for (c, v) in per_class_accuracy(&pred, &labels) {
            text.push_str(&format!("accuracy_class_{c},{v}\n"));
        }
    }
    println!("accuracy {acc:.4} on {} examples", labels.len());
    let path = out.add(&a.output);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    write_manifest(out, "eval", 0, a, &[&a.model, &a.features], &[&a.output])
}

fn pipeline_config(train: &TrainFlags, svm: &SvmFlags, seed: u64) -> Result<PipelineConfig> {
    Ok(PipelineConfig {
        sampler: SamplerConfig::default(),
        train: train.config(seed, None),
        svm: svm.config()?,
    })
}

fn cmd_experiment(a: &ExperimentArgs, out: &mut Outputs) -> Result<()> {
    let grid = ExperimentGrid {
        class_counts: parse_list(&a.classes, "classes")?,
        samples_per_class: parse_list(&a.samples, "samples")?,
        repeats: a.repeats,
        base_seed: a.seed,
        include_baseline: a.baseline,
        jobs: a.jobs,
    };
    grid.validate()?;
    let cfg = pipeline_config(&a.train, &a.svm, a.seed)?;
    let corpus = a.data.corpus()?;
    let eval = a.data.eval()?;
    let run_id = next_run_id(&a.output)?;
    let rows = run_grid(&grid, &corpus, &eval, &cfg, run_id)?;
    finish_rows(out, &a.output, &rows, "experiment", a.seed, a)
}

fn cmd_baseline(a: &BaselineArgs, out: &mut Outputs) -> Result<()> {
    let cfg = PipelineConfig {
        svm: a.svm.config()?,
        ..PipelineConfig::default()
    };
    let corpus = a.data.corpus()?;
    let eval = a.data.eval()?;
    let seeds: Vec<u64> = (0..a.repeats as u64).map(|r| a.seed + r).collect();
    let mut acc = Vec::new();
    for &s in &seeds {
        acc.push(baseline_accuracy(&corpus, a.n_patches, &eval, &cfg, s)?.accuracy);
    }
    let m = acc.iter().sum::<f64>() / acc.len() as f64;
    let sd = (acc.iter().map(|v| (v - m).powi(2)).sum::<f64>() / acc.len() as f64).sqrt();
    let row = GridRow {
        run_id: next_run_id(&a.output)?,
        n_classes: a.n_patches,
        k_samples: 0,
        val_error_surrogate: f64::NAN,
        downstream_accuracy: m,
        std: sd,
        seeds,
        status: "ok".into(),
    };
    finish_rows(out, &a.output, &[row], "baseline", a.seed, a)
}

fn finish_rows<C: Serialize>(out: &mut Outputs, path: &Path, rows: &[GridRow], command: &str, seed: u64, cfg: &C) -> Result<()> {
    let existed = path.exists();
    if !existed {
        out.add(path);
    }
    append_rows(path, rows)?;
    for r in rows {
        println!("{}", r.csv_line());
    }
    if rows.iter().any(|r| r.status != "ok") {
        warn!("some grid points failed; see the status column");
    }
    write_manifest(out, command, seed, cfg, &[], &[path])
}

fn run(cli: &Cli, out: &mut Outputs) -> Result<()> {
    match &cli.command {
        Command::Sample(a) => cmd_sample(a, out),
        Command::Augment(a) => cmd_augment(a, out),
        Command::Train(a) => cmd_train(a, out),
        Command::Extract(a) => cmd_extract(a, out),
        Command::Svm(a) => cmd_svm(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Experiment(a) => cmd_experiment(a, out),
        Command::Baseline(a) => cmd_baseline(a, out),
    }
}

fn main() -> ExitCode {
    let args = match expand_config(std::env::args().collect()) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(&cli.log_level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            warn!("could not size the thread pool: {e}");
        }
    }
    let mut out = Outputs(Vec::new());
    match run(&cli, &mut out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            out.discard();
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
