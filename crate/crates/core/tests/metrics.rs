use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seval_core::metrics::{
    balanced_accuracy, case_taxonomy, classwise_pr, correctness, cumulative_gain, estimated_precision, gain,
    CaseTag, ClassPR, OracleUnlabeled,
};
use seval_core::pl_engine::PseudoBatch;
use seval_core::{ProbMatrix, ThresholdVector};

fn labels(rng: &mut ChaCha8Rng, n: usize, c: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..c)).collect()
}

/// Gain by direct enumeration over classes.
fn gain_oracle(old: &[usize], new: &[usize], y: &[usize], c: usize) -> f64 {
    let acc = |p: &[usize]| p.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64;
    let mut class_term = 0.0;
    for k in 0..c {
        let idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == k).collect();
        if idx.is_empty() {
            continue;
        }
        let hits = |p: &[usize]| idx.iter().filter(|&&i| p[i] == k).count() as f64;
        class_term += (hits(new) - hits(old)) / idx.len() as f64;
    }
    acc(new) - acc(old) + class_term / c as f64
}

#[test]
fn gain_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let c = rng.random_range(2..8);
        let n = rng.random_range(1..300);
        let y = labels(&mut rng, n, c);
        let (old, new) = (labels(&mut rng, n, c), labels(&mut rng, n, c));
        let oracle = OracleUnlabeled::new(y.clone(), c).unwrap();
        let g = gain(&old, &new, &oracle).unwrap();
        assert!((g - gain_oracle(&old, &new, &y, c)).abs() < 1e-12);
    }
}

#[test]
fn gain_hand_case() {
    // truth [0, 0, 0, 1]; refinement flips sample 3 from 0 to 1
    let oracle = OracleUnlabeled::new(vec![0, 0, 0, 1], 2).unwrap();
    let g = gain(&[0, 0, 0, 0], &[0, 0, 0, 1], &oracle).unwrap();
    // accuracy 0.75 -> 1, balanced accuracy 0.5 -> 1
    assert_eq!(g, 0.25 + 0.5);
}

#[test]
fn gain_identities() {
    let y = vec![0, 1, 2, 1, 0, 2];
    let oracle = OracleUnlabeled::new(y.clone(), 3).unwrap();
    assert_eq!(gain(&y, &y, &oracle).unwrap(), 0.0);
    let wrong: Vec<usize> = y.iter().map(|v| (v + 1) % 3).collect();
    assert_eq!(gain(&wrong, &y, &oracle).unwrap(), 2.0);
    assert_eq!(gain(&y, &wrong, &oracle).unwrap(), -2.0);
}

#[test]
fn cumulative_gain_is_running_mean() {
    assert_eq!(cumulative_gain(&[2.0, 0.0]), vec![2.0, 1.0]);
    assert_eq!(cumulative_gain(&[0.3; 5]).iter().filter(|&&v| (v - 0.3).abs() < 1e-15).count(), 5);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let g: Vec<f64> = (0..100).map(|_| rng.random_range(-1.0..1.0)).collect();
    let run = cumulative_gain(&g);
    for i in 0..g.len() {
        let prefix: f64 = g[..=i].iter().sum();
        assert!((run[i] - prefix / (i + 1) as f64).abs() < 1e-12);
    }
}

fn one_hot_batch(pseudo: &[usize], c: usize, conf: f64) -> PseudoBatch {
    let rows: Vec<Vec<f64>> = pseudo
        .iter()
        .map(|&p| {
            let mut r = vec![(1.0 - conf) / (c - 1) as f64; c];
            r[p] = conf;
            r
        })
        .collect();
    batch_from(ProbMatrix::from_rows(&rows).unwrap(), pseudo.to_vec())
}

fn batch_from(q: ProbMatrix, pred_labels: Vec<usize>) -> PseudoBatch {
    let mask = vec![false; pred_labels.len()];
    PseudoBatch { hard_labels: q.argmax(), q, pred_labels, mask }
}

#[test]
fn correctness_trivial_cases() {
    let y = vec![0, 1, 0, 1];
    let oracle = OracleUnlabeled::new(y.clone(), 2).unwrap();
    let batch = one_hot_batch(&y, 2, 0.9);
    let all = correctness(&batch, &oracle, &ThresholdVector::constant(2, 0.5).unwrap()).unwrap();
    assert_eq!((all.quantity, all.quality, all.correctness), (1.0, 1.0, 1.0));
    let none = correctness(&batch, &oracle, &ThresholdVector::constant(2, 1.0).unwrap()).unwrap();
    assert_eq!((none.quantity, none.quality, none.correctness), (0.0, 0.0, 0.0));

    // half of each class clears the threshold, all correct
    let mut batch = one_hot_batch(&y, 2, 0.9);
    batch.q = ProbMatrix::from_rows(&[vec![0.9, 0.1], vec![0.1, 0.9], vec![0.6, 0.4], vec![0.4, 0.6]]).unwrap();
    let half = correctness(&batch, &oracle, &ThresholdVector::constant(2, 0.8).unwrap()).unwrap();
    assert_eq!((half.quantity, half.quality, half.correctness), (0.5, 1.0, 0.5));
}

#[test]
fn classwise_pr_matches_confusion_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..30 {
        let c = rng.random_range(2..7);
        let n = rng.random_range(1..200);
        let (p, y) = (labels(&mut rng, n, c), labels(&mut rng, n, c));
        let pr = classwise_pr(&p, &y, c).unwrap();
        let mut recalls = Vec::new();
        for k in 0..c {
            let tp = (0..n).filter(|&i| p[i] == k && y[i] == k).count() as f64;
            let pp = (0..n).filter(|&i| p[i] == k).count() as f64;
            let tt = (0..n).filter(|&i| y[i] == k).count() as f64;
            assert_eq!(pr[k].precision, (pp > 0.0).then(|| tp / pp));
            assert_eq!(pr[k].recall, (tt > 0.0).then(|| tp / tt));
            if tt > 0.0 {
                recalls.push(tp / tt);
            }
        }
        let bacc = balanced_accuracy(&p, &y, c).unwrap();
        assert!((bacc - recalls.iter().sum::<f64>() / recalls.len() as f64).abs() < 1e-12);
    }
}

#[test]
fn never_predicted_class_has_no_precision() {
    let pr = classwise_pr(&[0, 0, 0], &[0, 1, 0], 2).unwrap();
    assert_eq!(pr[1], ClassPR { precision: None, recall: Some(0.0) });
}

#[test]
fn taxonomy_cases() {
    let same = vec![ClassPR { precision: Some(0.5), recall: Some(0.5) }; 3];
    assert!(case_taxonomy(&same).unwrap().iter().all(|&t| t == CaseTag::Case4));
    let pr = [
        ClassPR { precision: Some(0.1), recall: Some(0.9) },
        ClassPR { precision: Some(0.9), recall: Some(0.1) },
    ];
    assert_eq!(case_taxonomy(&pr).unwrap(), vec![CaseTag::Case1, CaseTag::Case2]);
}

#[test]
fn estimated_precision_matches_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rows: Vec<Vec<f64>> = (0..60)
        .map(|_| seval_core::logits::softmax(&[rng.random(), rng.random(), rng.random()]))
        .collect();
    let q = estimated_precision(&ProbMatrix::from_rows(&rows).unwrap());
    for k in 0..3 {
        let mut num = 0.0;
        let mut den = 0.0;
        for r in &rows {
            let top = (0..3).fold(0, |b, j| if r[j] > r[b] { j } else { b });
            if top == k {
                num += r[k];
            }
            den += r[k];
        }
        assert!((q[k].unwrap() - num / den).abs() < 1e-12);
    }
    let uniform = ProbMatrix::from_rows(&vec![vec![0.5, 0.5]; 4]).unwrap();
    assert_eq!(estimated_precision(&uniform), vec![Some(1.0), Some(0.0)]);
}

proptest! {
    #[test]
    fn gain_is_antisymmetric(seed in any::<u64>(), n in 1usize..100, c in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = labels(&mut rng, n, c);
        let (a, b) = (labels(&mut rng, n, c), labels(&mut rng, n, c));
        let oracle = OracleUnlabeled::new(y, c).unwrap();
        let ab = gain(&a, &b, &oracle).unwrap();
        let ba = gain(&b, &a, &oracle).unwrap();
        prop_assert!((ab + ba).abs() < 1e-12);
    }

    #[test]
    fn correctness_is_bounded(seed in any::<u64>(), n in 1usize..100, tau in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = 3;
        let y = labels(&mut rng, n, c);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| seval_core::logits::softmax(&[rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), 0.0]))
            .collect();
        let q = ProbMatrix::from_rows(&rows).unwrap();
        let pred = labels(&mut rng, n, c);
        let tau = ThresholdVector::constant(c, tau).unwrap();
        let batch = batch_from(q, pred);
        let r = correctness(&batch, &OracleUnlabeled::new(y, c).unwrap(), &tau).unwrap();
        for v in [r.quantity, r.quality, r.correctness] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(r.quantity <= r.quality + 1e-12 || r.quality == 0.0);
    }
}
