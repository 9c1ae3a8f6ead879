//! Refined pseudo-labels, per-class selection masks, and the masked unlabeled risk.

use crate::error::{check_dim, invalid, Result};
use crate::logits::{LogitMatrix, ProbMatrix};
use crate::offsets::{apply_offsets, OffsetVector};
use crate::thresholds::ThresholdVector;

/// Pseudo-labels for one unlabeled batch.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoBatch {
    /// Refined pseudo-label probabilities.
    pub q: ProbMatrix,
    /// Argmax of `q`.
    pub hard_labels: Vec<usize>,
    /// Argmax of the training-pathway probabilities.
    pub pred_labels: Vec<usize>,
    pub mask: Vec<bool>,
}

impl PseudoBatch {
    pub fn build(
        unlabeled_logits: &LogitMatrix,
        pi: &OffsetVector,
        pred_labels: Vec<usize>,
        tau: &ThresholdVector,
    ) -> Result<Self> {
        let (q, hard_labels) = pseudo_label(unlabeled_logits, pi)?;
        let mask = select_mask(&q, &pred_labels, tau)?;
        Ok(Self { q, hard_labels, pred_labels, mask })
    }

    pub fn len(&self) -> usize {
        self.hard_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hard_labels.is_empty()
    }
}

/// `q = softmax(z - log pi)` and its row argmax (ties to the lowest class).
pub fn pseudo_label(unlabeled_logits: &LogitMatrix, pi: &OffsetVector) -> Result<(ProbMatrix, Vec<usize>)> {
    let q = apply_offsets(unlabeled_logits, pi)?.softmax();
    let hard = q.argmax();
    Ok((q, hard))
}

/// `mask_i = max_j q_ij >= tau[pred_labels_i]`.
///
/// The threshold is looked up by the training-pathway prediction, not by the
/// pseudo-label.
pub fn select_mask(q: &ProbMatrix, pred_labels: &[usize], tau: &ThresholdVector) -> Result<Vec<bool>> {
    check_dim("predicted labels", q.n_samples(), pred_labels.len())?;
    check_dim("threshold vector length", q.n_classes(), tau.len())?;
    let tau = tau.as_slice();
    q.max_probs()
        .into_iter()
        .zip(pred_labels)
        .enumerate()
        .map(|(i, (m, &p))| match tau.get(p) {
            Some(&t) => Ok(m >= t),
            None => invalid(format!("predicted label {p} at row {i} out of range")),
        })
        .collect()
}

/// Mean over all `M` samples of `1[selected] * CE(hard label, train_probs)`.
pub fn unlabeled_risk(hard_labels: &[usize], mask: &[bool], train_probs: &ProbMatrix) -> Result<f64> {
    let m = train_probs.n_samples();
    check_dim("pseudo-labels", m, hard_labels.len())?;
    check_dim("mask", m, mask.len())?;
    if m == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (i, (&y, &keep)) in hard_labels.iter().zip(mask).enumerate() {
        if keep {
            if y >= train_probs.n_classes() {
                return invalid(format!("pseudo-label {y} at row {i} out of range"));
            }
            total -= train_probs.get(i, y).max(1e-12).ln();
        }
    }
    Ok(total / m as f64)
}
