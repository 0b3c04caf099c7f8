//! Desk-scale pipeline on procedural data: trained features against the
//! random-filter baseline on the 4-class shape task.
//!
//! `cargo run --release --example desk_pipeline -- [classes] [per_class] [seed]`

use std::time::Instant;

use exemplar::experiment::{baseline_accuracy, run_pipeline, EvalData, PipelineConfig};
use exemplar::synth;

fn main() -> exemplar::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let classes = args.first().copied().unwrap_or(100);
    let k = args.get(1).copied().unwrap_or(32);
    let seed = args.get(2).copied().unwrap_or(0) as u64;

    let corpus = synth::textured_corpus(300, 96, 96, seed);
    let train = synth::shape_classes(100, 32, 1000 + seed);
    let test = synth::shape_classes(200, 32, 2000 + seed);
    let eval = EvalData { train, test };
    let cfg = PipelineConfig::default();

    let t = Instant::now();
    let base = baseline_accuracy(&corpus, classes, &eval, &cfg, seed)?;
    println!("random filters: accuracy {:.4} (C {}) in {:.1}s", base.accuracy, base.best_c, t.elapsed().as_secs_f64());

    let t = Instant::now();
    let run = run_pipeline(&corpus, classes, k, Some(&eval), &cfg, seed)?;
    let d = run.downstream.expect("evaluation requested");
    println!(
        "trained: surrogate val err {:.4} after {} epochs, accuracy {:.4} (C {}) in {:.1}s",
        run.log.best_val_err,
        run.log.epochs.len(),
        d.accuracy,
        d.best_c,
        t.elapsed().as_secs_f64()
    );
    Ok(())
}
