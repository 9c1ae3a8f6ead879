use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seval_core::thresholds::{
    apply_pi_floor, candidate_thresholds, fit_thresholds, selected_accuracy, ScoredHoldout,
};
use seval_core::{ClassWeights, OffsetVector, ProbMatrix, ThresholdFitConfig};

fn random_holdout(seed: u64) -> ScoredHoldout {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = rng.random_range(2..=10);
    let k = rng.random_range(1..=200);
    let rows: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            // integer logits make repeated confidences common
            let z: Vec<f64> = (0..c).map(|_| rng.random_range(0..4) as f64).collect();
            seval_core::logits::softmax(&z)
        })
        .collect();
    let probs = ProbMatrix::from_rows(&rows).unwrap();
    let pred = probs.argmax();
    // labels agree with the prediction most of the time
    let labels = pred
        .iter()
        .map(|&p| if rng.random_bool(0.7) { p } else { rng.random_range(0..c) })
        .collect();
    ScoredHoldout::new(&probs, labels).unwrap()
}

/// Per-class exhaustive search, written independently of the library.
fn brute_force(h: &ScoredHoldout, t: f64) -> (Vec<f64>, BTreeSet<usize>) {
    let mut tau = vec![0.0; h.n_classes()];
    let mut fallback = BTreeSet::new();
    for c in 0..h.n_classes() {
        let members: Vec<usize> = (0..h.labels.len()).filter(|&i| h.pred[i] == c).collect();
        let correct = members.iter().filter(|&&i| h.labels[i] == c).count();
        if members.is_empty() || correct as f64 / members.len() as f64 <= t {
            fallback.insert(c);
            continue;
        }
        let mut conf: Vec<f64> = members.iter().map(|&i| h.max_prob[i]).collect();
        conf.sort_by(f64::total_cmp);
        conf.dedup();
        let mut cands = vec![0.0, 1.0];
        cands.extend(conf.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        cands.sort_by(f64::total_cmp);
        let mut best: Option<(f64, f64)> = None;
        for cand in cands {
            let sel: Vec<usize> = members.iter().copied().filter(|&i| h.max_prob[i] > cand).collect();
            if sel.is_empty() {
                continue;
            }
            let a = sel.iter().filter(|&&i| h.labels[i] == c).count() as f64 / sel.len() as f64;
            let err = (a - t).abs();
            if best.is_none_or(|(_, e)| err < e) {
                best = Some((cand, err));
            }
        }
        tau[c] = best.unwrap().0;
    }
    (tau, fallback)
}

#[test]
fn single_class_fit_matches_brute_force() {
    let cfg = ThresholdFitConfig { pi_floor_rule: false, ..Default::default() };
    for seed in 0..100 {
        let h = random_holdout(seed);
        let report = fit_thresholds(&h, &ClassWeights::uniform(h.n_classes()), &cfg).unwrap();
        let (tau, fallback) = brute_force(&h, cfg.target_t);
        assert_eq!(report.tau.as_slice(), &tau[..], "seed {seed}");
        assert_eq!(report.fallback_classes, fallback, "seed {seed}");
        for &c in &fallback {
            assert_eq!(tau[c], 0.0);
        }
    }
}

#[test]
fn low_precision_class_falls_back_to_zero() {
    // class 1 predictions are right only half of the time: alpha = 0.5 <= 0.75
    let probs = ProbMatrix::from_rows(&[
        vec![0.9, 0.1],
        vec![0.8, 0.2],
        vec![0.3, 0.7],
        vec![0.1, 0.9],
    ])
    .unwrap();
    let h = ScoredHoldout::new(&probs, vec![0, 0, 1, 0]).unwrap();
    let cfg = ThresholdFitConfig { pi_floor_rule: false, ..Default::default() };
    let r = fit_thresholds(&h, &ClassWeights::uniform(2), &cfg).unwrap();
    assert_eq!(r.tau.as_slice()[1], 0.0);
    assert!(r.fallback_classes.contains(&1));
    assert!(!r.fallback_classes.contains(&0));
}

#[test]
fn candidate_grid_attains_the_fine_grid_optimum() {
    for seed in 0..20 {
        let h = random_holdout(500 + seed);
        let w = ClassWeights::uniform(h.n_classes());
        for c in 0..h.n_classes() {
            let conf: Vec<f64> = (0..h.labels.len()).filter(|&i| h.pred[i] == c).map(|i| h.max_prob[i]).collect();
            let err = |tau: f64| selected_accuracy(&h, &w, c, tau).unwrap().map(|a| (a - 0.75).abs());
            let on_candidates = candidate_thresholds(&conf).into_iter().filter_map(err).fold(f64::INFINITY, f64::min);
            let on_grid = (0..10_000).filter_map(|i| err(i as f64 * 1e-4)).fold(f64::INFINITY, f64::min);
            assert!(on_candidates <= on_grid + 1e-12, "seed {seed} class {c}");
        }
    }
}

#[test]
fn uniform_weight_scaling_changes_nothing() {
    let cfg = ThresholdFitConfig::default();
    for seed in 0..20 {
        let h = random_holdout(200 + seed);
        let counts = seval_core::logits::class_counts(&h.labels, h.n_classes());
        let w = ClassWeights::inverse_frequency(&counts);
        let base = fit_thresholds(&h, &w, &cfg).unwrap();
        for k in [0.5, 3.0, 1e-3, 250.0] {
            let scaled = w.scaled(k).unwrap();
            assert_eq!(fit_thresholds(&h, &scaled, &cfg).unwrap(), base, "seed {seed} k {k}");
            for c in 0..h.n_classes() {
                for tau in [0.0, 0.3, 0.5, 0.8] {
                    let a = selected_accuracy(&h, &w, c, tau).unwrap();
                    let b = selected_accuracy(&h, &scaled, c, tau).unwrap();
                    match (a, b) {
                        (Some(a), Some(b)) => assert!((a - b).abs() < 1e-12),
                        (a, b) => assert_eq!(a, b),
                    }
                }
            }
        }
    }
}

/// Ten classes with twenty perfectly classified holdout samples each, except
/// that class 9 keeps only `tail` true samples and is predicted for `hits` of them.
fn ten_class_holdout(tail: usize, hits: usize) -> ScoredHoldout {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for c in 0..10 {
        let n = if c == 9 { tail } else { 20 };
        for i in 0..n {
            let predicted = if c == 9 && i >= hits { 0 } else { c };
            let mut row = vec![0.02; 10];
            row[predicted] = 0.82;
            rows.push(row);
            labels.push(c);
        }
    }
    ScoredHoldout::new(&ProbMatrix::from_rows(&rows).unwrap(), labels).unwrap()
}

#[test]
fn rarely_predicted_class_is_floored() {
    // 1 prediction out of 200 samples: share 0.005 < 1 / (e1 * C) = 0.01
    let h = ten_class_holdout(20, 1);
    let r = fit_thresholds(&h, &ClassWeights::uniform(10), &ThresholdFitConfig::default()).unwrap();
    assert_eq!(r.pi_floor_classes, BTreeSet::from([9]));
    // class 0 absorbs the 19 misses, so its accuracy 20/39 also falls short of t
    assert_eq!(r.fallback_classes, BTreeSet::from([0, 9]));
    assert_eq!(r.tau.as_slice()[9], 0.0);

    // 2 predictions: share exactly 0.01 is not below the cutoff
    let h = ten_class_holdout(20, 2);
    let r = fit_thresholds(&h, &ClassWeights::uniform(10), &ThresholdFitConfig::default()).unwrap();
    assert!(r.pi_floor_classes.is_empty());
}

#[test]
fn class_with_few_samples_is_floored() {
    let h = ten_class_holdout(9, 9);
    let r = fit_thresholds(&h, &ClassWeights::uniform(10), &ThresholdFitConfig::default()).unwrap();
    assert_eq!(r.pi_floor_classes, BTreeSet::from([9]));
    assert_eq!(r.tau.as_slice()[9], 0.0);

    let h = ten_class_holdout(10, 10);
    let r = fit_thresholds(&h, &ClassWeights::uniform(10), &ThresholdFitConfig::default()).unwrap();
    assert!(r.pi_floor_classes.is_empty());

    // grouped: the small class drags its whole group down
    let cfg = ThresholdFitConfig { group_size: 2, ..Default::default() };
    let h = ten_class_holdout(9, 9);
    let r = fit_thresholds(&h, &ClassWeights::uniform(10), &cfg).unwrap();
    assert_eq!(r.pi_floor_classes.len(), 2);
    assert!(r.pi_floor_classes.contains(&9));
}

#[test]
fn floored_offsets_drop_to_the_minimum() {
    let pi = OffsetVector::new(vec![4.0, 1.0, 0.5, 2.0]).unwrap();
    let floored = apply_pi_floor(&pi, &BTreeSet::from([0, 3])).unwrap();
    let v = floored.as_slice();
    assert!((v[0] - v[2]).abs() < 1e-12 && (v[3] - v[2]).abs() < 1e-12);
    assert!((v[1] / v[2] - 2.0).abs() < 1e-12);
    let gm: f64 = floored.log().iter().sum();
    assert!(gm.abs() < 1e-12);
}

proptest! {
    #[test]
    fn thresholds_stay_in_unit_interval(seed in any::<u64>(), t in 0.05f64..0.95, b in 1usize..4) {
        let h = random_holdout(seed);
        let cfg = ThresholdFitConfig { target_t: t, group_size: b, ..Default::default() };
        let counts = seval_core::logits::class_counts(&h.labels, h.n_classes());
        let r = fit_thresholds(&h, &ClassWeights::inverse_frequency(&counts), &cfg).unwrap();
        for (c, &tau) in r.tau.as_slice().iter().enumerate() {
            prop_assert!((0.0..=1.0).contains(&tau));
            if r.fallback_classes.contains(&c) {
                prop_assert_eq!(tau, 0.0);
            }
        }
        prop_assert!(r.pi_floor_classes.is_subset(&r.fallback_classes));
    }

    #[test]
    fn selected_mass_shrinks_as_threshold_rises(seed in any::<u64>(), lo in 0.0f64..1.0, hi in 0.0f64..1.0) {
        let h = random_holdout(seed);
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        for c in 0..h.n_classes() {
            let count = |tau: f64| (0..h.labels.len()).filter(|&i| h.pred[i] == c && h.max_prob[i] > tau).count();
            prop_assert!(count(hi) <= count(lo));
        }
    }
}
