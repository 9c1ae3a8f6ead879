use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seval_core::offsets::{
    apply_offsets, balanced_holdout_cross_entropy, fit_offsets, holdout_cross_entropy, OffsetFitConfig,
};
use seval_core::{LabeledBatch, LogitMatrix, OffsetVector};

fn sample_label(u: f64, probs: &[f64]) -> usize {
    let mut acc = 0.0;
    for (c, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return c;
        }
    }
    probs.len() - 1
}

/// Holdout whose labels are drawn from `softmax(z - log pi_true)`.
///
/// The uniforms driving the draws are Latin-hypercube: a shuffled `(j + v) / k`.
/// Each label keeps its exact marginal law while the class totals fluctuate less.
fn planted(seed: u64, k: usize, log_pi_true: &[f64]) -> LabeledBatch {
    use rand::seq::SliceRandom;
    let c = log_pi_true.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniforms: Vec<f64> = (0..k).map(|j| (j as f64 + rng.random::<f64>()) / k as f64).collect();
    uniforms.shuffle(&mut rng);
    let mut values = Vec::with_capacity(k * c);
    let mut labels = Vec::with_capacity(k);
    for &u in &uniforms {
        let row: Vec<f64> = (0..c).map(|_| rng.random_range(-1.0..1.0)).collect();
        let shifted: Vec<f64> = row.iter().zip(log_pi_true).map(|(z, l)| z - l).collect();
        labels.push(sample_label(u, &seval_core::logits::softmax(&shifted)));
        values.extend(row);
    }
    LabeledBatch::new(LogitMatrix::new(values, k, c).unwrap(), labels).unwrap()
}

/// Two-class cross-entropy as a function of the log-offset difference alone.
fn two_class_objective(batch: &LabeledBatch, d: f64) -> f64 {
    let mut total = 0.0;
    for (row, &y) in batch.logits.rows().zip(&batch.labels) {
        // softmax([z0 - d, z1]) in closed form
        let margin = row[0] - d - row[1];
        let p0 = 1.0 / (1.0 + (-margin).exp());
        let p = if y == 0 { p0 } else { 1.0 - p0 };
        total -= p.max(1e-12).ln();
    }
    total / batch.len() as f64
}

#[test]
fn two_class_fit_matches_grid_search() {
    let cfg = OffsetFitConfig::default();
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let d_true = rng.random_range(-2.0..2.0);
        let batch = planted(seed, 200, &[d_true / 2.0, -d_true / 2.0]);
        let (mut best_d, mut best_f) = (0.0, f64::INFINITY);
        for i in 0..=10_000 {
            let d = -5.0 + i as f64 * 1e-3;
            let f = two_class_objective(&batch, d);
            if f < best_f {
                best_f = f;
                best_d = d;
            }
        }
        let fit = fit_offsets(&batch, &cfg).unwrap();
        let log_pi = fit.pi.log();
        let d = log_pi[0] - log_pi[1];
        assert!((d - best_d).abs() < 1e-2, "seed {seed}: solver {d}, grid {best_d}");
    }
}

#[test]
fn planted_offsets_are_recovered() {
    let cfg = OffsetFitConfig::default();
    for log_pi_true in [vec![0.7, -0.7], vec![0.6, 0.3, 0.0, -0.3, -0.6]] {
        let truth = OffsetVector::from_log(&log_pi_true).unwrap().log();
        for seed in 0..5 {
            let batch = planted(seed, 10_000, &log_pi_true);
            let fit = fit_offsets(&batch, &cfg).unwrap();
            assert!(fit.converged);
            for (a, b) in fit.pi.log().iter().zip(&truth) {
                assert!((a - b).abs() < 0.05, "seed {seed}: {:?} vs {truth:?}", fit.pi.log());
            }
        }
    }
}

#[test]
fn balanced_fit_ignores_holdout_prior() {
    // constant logits: the plain fit reproduces the holdout prior, the
    // balanced fit has nothing to correct
    let labels = vec![0, 0, 0, 0, 0, 0, 1, 1, 2];
    let logits = LogitMatrix::new(vec![0.0; labels.len() * 3], labels.len(), 3).unwrap();
    let batch = LabeledBatch::new(logits, labels).unwrap();
    let plain = fit_offsets(&batch, &OffsetFitConfig::default()).unwrap();
    let p = seval_core::logits::softmax(&plain.pi.log().iter().map(|l| -l).collect::<Vec<_>>());
    for (got, want) in p.iter().zip([6.0 / 9.0, 2.0 / 9.0, 1.0 / 9.0]) {
        assert!((got - want).abs() < 1e-5);
    }
    let cfg = OffsetFitConfig { class_balanced: true, ..Default::default() };
    let balanced = fit_offsets(&batch, &cfg).unwrap();
    for v in balanced.pi.as_slice() {
        assert!((v - 1.0).abs() < 1e-5);
    }
    let at_fit = balanced_holdout_cross_entropy(&batch, &balanced.pi).unwrap();
    assert!((at_fit - 3f64.ln()).abs() < 1e-9);
}

fn arb_batch() -> impl Strategy<Value = LabeledBatch> {
    (2usize..6, 1usize..40).prop_flat_map(|(c, k)| {
        (
            prop::collection::vec(-6.0f64..6.0, k * c),
            prop::collection::vec(0..c, k),
        )
            .prop_map(move |(v, y)| LabeledBatch::new(LogitMatrix::new(v, k, c).unwrap(), y).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fit_never_worse_than_identity(batch in arb_batch(), balanced in any::<bool>()) {
        let cfg = OffsetFitConfig { class_balanced: balanced, ..Default::default() };
        let fit = fit_offsets(&batch, &cfg).unwrap();
        prop_assert!(fit.objective <= fit.initial_objective + 1e-12);
        let gm: f64 = fit.pi.log().iter().sum::<f64>() / fit.pi.len() as f64;
        prop_assert!(gm.abs() < 1e-9);
        if !balanced {
            let direct = holdout_cross_entropy(&batch, &fit.pi).unwrap();
            prop_assert!((direct - fit.objective).abs() < 1e-9);
        }
    }

    #[test]
    fn scaled_offsets_refine_identically(batch in arb_batch(), k in 0.01f64..100.0) {
        let c = batch.n_classes();
        let pi = OffsetVector::from_values((1..=c).map(|i| i as f64 * 0.7).collect()).unwrap();
        let a = apply_offsets(&batch.logits, &pi).unwrap().softmax();
        let b = apply_offsets(&batch.logits, &pi.scaled(k).unwrap()).unwrap().softmax();
        prop_assert_eq!(a.argmax(), b.argmax());
        for (x, y) in a.rows().flatten().zip(b.rows().flatten()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}

