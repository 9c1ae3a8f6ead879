//! Comparison refinements: distribution alignment, a simplified
//! learning-status threshold rule, and test-time logit adjustment.

use crate::error::{check_dim, invalid, Result};
use crate::logits::{LogitMatrix, ProbMatrix};
use crate::offsets::{apply_offsets, OffsetVector};
use crate::thresholds::ThresholdVector;

const MARGINAL_FLOOR: f64 = 1e-8;

/// `q~_ic ∝ q_ic * target_c / marginal_c`, renormalized per row.
pub fn da_refine(q: &ProbMatrix, running_marginal: &[f64], target_prior: &[f64]) -> Result<ProbMatrix> {
    let c = q.n_classes();
    check_dim("running marginal", c, running_marginal.len())?;
    check_dim("target prior", c, target_prior.len())?;
    let ratio: Vec<f64> = target_prior
        .iter()
        .zip(running_marginal)
        .map(|(t, m)| t / m.max(MARGINAL_FLOOR))
        .collect();
    let mut values = Vec::with_capacity(q.n_samples() * c);
    for row in q.rows() {
        let start = values.len();
        values.extend(row.iter().zip(&ratio).map(|(p, r)| p * r));
        let s: f64 = values[start..].iter().sum();
        if s > 0.0 {
            values[start..].iter_mut().for_each(|v| *v /= s);
        } else {
            values[start..].iter_mut().for_each(|v| *v = 1.0 / c as f64);
        }
    }
    Ok(ProbMatrix::from_raw(values, q.n_samples(), c))
}

/// Running mean of predicted class probabilities on unlabeled batches.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningMarginal {
    pub marginal: Vec<f64>,
    pub decay: f64,
}

impl RunningMarginal {
    /// Starts uniform.
    pub fn new(n_classes: usize, decay: f64) -> Self {
        Self { marginal: vec![1.0 / n_classes as f64; n_classes], decay }
    }

    pub fn update(&mut self, q: &ProbMatrix) {
        let n = q.n_samples();
        if n == 0 {
            return;
        }
        let mut mean = vec![0.0; q.n_classes()];
        for row in q.rows() {
            for (m, p) in mean.iter_mut().zip(row) {
                *m += p / n as f64;
            }
        }
        let d = self.decay;
        for (r, m) in self.marginal.iter_mut().zip(mean) {
            *r = d * *r + (1.0 - d) * m;
        }
    }
}

/// `tau_c = tau_base * count_c / max_j count_j`; all `tau_base` when no class
/// has a confident prediction yet.
pub fn flex_like_thresholds(confident_counts: &[usize], tau_base: f64) -> Result<ThresholdVector> {
    if !(0.0..=1.0).contains(&tau_base) {
        return invalid(format!("tau_base must lie in [0, 1], got {tau_base}"));
    }
    let max = confident_counts.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return ThresholdVector::constant(confident_counts.len(), tau_base);
    }
    ThresholdVector::new(
        confident_counts
            .iter()
            .map(|&n| tau_base * n as f64 / max as f64)
            .collect(),
    )
}

/// Latest (prediction, confident?) per unlabeled sample, from which the
/// per-class confident counts are read.
#[derive(Clone, Debug, PartialEq)]
pub struct LearningStatus {
    latest: Vec<Option<usize>>,
    counts: Vec<usize>,
}

impl LearningStatus {
    pub fn new(pool_size: usize, n_classes: usize) -> Self {
        Self { latest: vec![None; pool_size], counts: vec![0; n_classes] }
    }

    /// Records the confident class of sample `i`, or `None` when not confident.
    pub fn set(&mut self, i: usize, confident_class: Option<usize>) {
        if let Some(old) = self.latest[i] {
            self.counts[old] -= 1;
        }
        if let Some(c) = confident_class {
            self.counts[c] += 1;
        }
        self.latest[i] = confident_class;
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }
}

/// Argmax of `z - log pi`.
pub fn post_hoc_adjust(test_logits: &LogitMatrix, pi_final_raw: &OffsetVector) -> Result<Vec<usize>> {
    Ok(apply_offsets(test_logits, pi_final_raw)?.argmax())
}
