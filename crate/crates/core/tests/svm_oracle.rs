use exemplar::rng::substream;
use exemplar::svm::{cross_validate_c, evaluate, stratified_folds, train_svm, DEFAULT_STEPS};
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn objective(w: &[f64], xs: &[Vec<f64>], ys: &[f64], c: f64) -> f64 {
    let d = xs[0].len();
    let reg: f64 = w.iter().map(|v| v * v).sum::<f64>() / (2.0 * c);
    let mut hinge = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let mut s = w[d];
        for j in 0..d {
            s += w[j] * x[j];
        }
        hinge += (1.0 - y * s).max(0.0);
    }
    reg + hinge / xs.len() as f64
}

/// Full-batch subgradient descent with diminishing steps, keeping the best
/// iterate seen.
fn full_batch_minimum(xs: &[Vec<f64>], ys: &[f64], c: f64, iters: usize) -> f64 {
    let d = xs[0].len();
    let mut w = vec![0.0; d + 1];
    let mut best = objective(&w, xs, ys, c);
    for t in 1..=iters {
        let mut g: Vec<f64> = w.iter().map(|v| v / c).collect();
        for (x, y) in xs.iter().zip(ys) {
            let s = w[d] + (0..d).map(|j| w[j] * x[j]).sum::<f64>();
            if y * s < 1.0 {
                for j in 0..d {
                    g[j] -= y * x[j] / xs.len() as f64;
                }
                g[d] -= y / xs.len() as f64;
            }
        }
        let step = 0.5 / (t as f64).sqrt();
        for (a, b) in w.iter_mut().zip(&g) {
            *a -= step * b;
        }
        best = best.min(objective(&w, xs, ys, c));
    }
    best
}

fn standardize(rows: &[Vec<f32>]) -> Vec<Vec<f64>> {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mut out: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
    for j in 0..d {
        let m = out.iter().map(|r| r[j]).sum::<f64>() / n;
        let sd = (out.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n).sqrt();
        let sd = if sd > 1e-12 { sd } else { 1.0 };
        for r in &mut out {
            r[j] = (r[j] - m) / sd;
        }
    }
    out
}

fn overlapping_points(n: usize, seed: u64) -> (Vec<Vec<f32>>, Vec<u32>) {
    let mut rng = substream(seed, 0);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let l = (i % 2) as u32;
        let shift = if l == 0 { -0.8 } else { 0.8 };
        rows.push(vec![(shift + noise.sample(&mut rng)) as f32, (0.5 * shift + noise.sample(&mut rng)) as f32]);
        labels.push(l);
    }
    let _ = rng.random::<u8>();
    (rows, labels)
}

#[test]
fn objective_within_one_percent_of_full_batch_oracle() {
    for (seed, c) in [(1, 1.0), (2, 1.0), (3, 10.0), (4, 0.1)] {
        let (rows, labels) = overlapping_points(20, seed);
        let model = train_svm(&rows, &labels, c, DEFAULT_STEPS, seed).unwrap();
        let xs = standardize(&rows);
        let ys: Vec<f64> = labels.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();
        let mut w: Vec<f64> = model.weights[1].iter().map(|&v| v as f64).collect();
        w.push(model.bias[1] as f64);
        let got = objective(&w, &xs, &ys, c);
        let best = full_batch_minimum(&xs, &ys, c, 200_000);
        assert!(got <= best * 1.01, "seed {seed} C {c}: {got} vs oracle {best}");
        assert!(got >= best * 0.999, "seed {seed} C {c}: {got} below oracle {best}");
    }
}

#[test]
fn objective_does_not_grow_with_more_steps() {
    let (rows, labels) = overlapping_points(20, 7);
    let xs = standardize(&rows);
    let ys: Vec<f64> = labels.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();
    let mut prev = f64::INFINITY;
    for steps in [1_000, 4_000, 16_000, 64_000] {
        let model = train_svm(&rows, &labels, 1.0, steps, 3).unwrap();
        let mut w: Vec<f64> = model.weights[1].iter().map(|&v| v as f64).collect();
        w.push(model.bias[1] as f64);
        let obj = objective(&w, &xs, &ys, 1.0);
        assert!(obj <= prev + 1e-4, "{steps} steps: {obj} after {prev}");
        prev = obj;
    }
}

#[test]
fn cross_validation_matches_exhaustive_grid_evaluation() {
    // One weak informative dimension among many noise dimensions: strong
    // regularization wins.
    let mut rng = substream(21, 0);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let n = 100;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let l = (i % 2) as u32;
        let mut r: Vec<f32> = (0..300).map(|_| noise.sample(&mut rng) as f32).collect();
        r[0] += if l == 0 { -1.5 } else { 1.5 };
        rows.push(r);
        labels.push(l);
    }
    let grid = [0.001, 0.01, 0.1, 1.0, 10.0, 100.0, 1000.0];
    let steps = 20_000;
    let cv = cross_validate_c(&rows, &labels, &grid, 5, steps, 4).unwrap();

    let folds = stratified_folds(&labels, 5, 4);
    let mut best = (f64::NAN, -1.0);
    for &c in &grid {
        let mut acc = 0.0;
        for f in 0..5 {
            let tr: Vec<usize> = (0..n).filter(|&i| folds[i] != f).collect();
            let va: Vec<usize> = (0..n).filter(|&i| folds[i] == f).collect();
            let model = train_svm(
                &tr.iter().map(|&i| rows[i].clone()).collect::<Vec<_>>(),
                &tr.iter().map(|&i| labels[i]).collect::<Vec<_>>(),
                c,
                steps,
                4,
            )
            .unwrap();
            acc += evaluate(
                &model,
                &va.iter().map(|&i| rows[i].clone()).collect::<Vec<_>>(),
                &va.iter().map(|&i| labels[i]).collect::<Vec<_>>(),
            )
            .unwrap();
        }
        acc /= 5.0;
        if acc > best.1 + 1e-9 {
            best = (c, acc);
        }
    }
    assert_eq!(cv.best_c, best.0);
    assert!(cv.best_c <= 1.0, "expected strong regularization to win: {:?}", cv.scores);
}

#[test]
fn random_labels_give_chance_accuracy() {
    let mut rng = substream(31, 0);
    let mut draw = |n: usize| -> (Vec<Vec<f32>>, Vec<u32>) {
        let rows = (0..n).map(|_| (0..10).map(|_| rng.random_range(-1.0f32..1.0)).collect()).collect();
        let labels = (0..n).map(|i| (i % 2) as u32).collect();
        (rows, labels)
    };
    let (train_x, train_y) = draw(200);
    let (test_x, test_y) = draw(1000);
    let model = train_svm(&train_x, &train_y, 1.0, DEFAULT_STEPS, 0).unwrap();
    let acc = evaluate(&model, &test_x, &test_y).unwrap();
    assert!((acc - 0.5).abs() <= 0.05, "accuracy {acc}");
}
