//! Per-class confidence thresholds chosen so that the selected pseudo-labels
//! of every class reach a target accuracy on a labeled holdout.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::logits::{class_counts, ProbMatrix};
use crate::offsets::OffsetVector;

/// Per-class cutoffs, each in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ThresholdVector {
    tau: Vec<f64>,
}

impl ThresholdVector {
    pub fn new(tau: Vec<f64>) -> Result<Self> {
        if let Some(c) = tau.iter().position(|t| !(0.0..=1.0).contains(t)) {
            return invalid(format!("threshold for class {c} must lie in [0, 1], got {}", tau[c]));
        }
        Ok(Self { tau })
    }

    pub fn constant(n_classes: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; n_classes])
    }

    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.tau
    }
}

impl TryFrom<Vec<f64>> for ThresholdVector {
    type Error = Error;

    fn try_from(tau: Vec<f64>) -> Result<Self> {
        Self::new(tau)
    }
}

impl From<ThresholdVector> for Vec<f64> {
    fn from(v: ThresholdVector) -> Self {
        v.tau
    }
}

/// Per-class sample weights, looked up by a sample's true class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ClassWeights {
    omega: Vec<f64>,
}

impl ClassWeights {
    pub fn new(omega: Vec<f64>) -> Result<Self> {
        if let Some(c) = omega.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
            return invalid(format!("weight for class {c} must be positive and finite, got {}", omega[c]));
        }
        Ok(Self { omega })
    }

    pub fn uniform(n_classes: usize) -> Self {
        Self { omega: vec![1.0; n_classes] }
    }

    /// `1 / k_c`. Classes with no samples get weight 1; it is never looked up.
    pub fn inverse_frequency(counts: &[usize]) -> Self {
        let omega = counts
            .iter()
            .map(|&k| if k == 0 { 1.0 } else { 1.0 / k as f64 })
            .collect();
        Self { omega }
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.omega
    }

    pub fn get(&self, c: usize) -> f64 {
        self.omega[c]
    }

    pub fn scaled(&self, k: f64) -> Result<Self> {
        Self::new(self.omega.iter().map(|w| w * k).collect())
    }
}

impl TryFrom<Vec<f64>> for ClassWeights {
    type Error = Error;

    fn try_from(omega: Vec<f64>) -> Result<Self> {
        Self::new(omega)
    }
}

impl From<ClassWeights> for Vec<f64> {
    fn from(v: ClassWeights) -> Self {
        v.omega
    }
}

/// Holdout predictions reduced to what threshold fitting needs.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredHoldout {
    pub pred: Vec<usize>,
    pub max_prob: Vec<f64>,
    pub labels: Vec<usize>,
    n_classes: usize,
}

impl ScoredHoldout {
    pub fn new(probs: &ProbMatrix, labels: Vec<usize>) -> Result<Self> {
        check_dim("labels", probs.n_samples(), labels.len())?;
        let n_classes = probs.n_classes();
        if let Some(i) = labels.iter().position(|&y| y >= n_classes) {
            return invalid(format!("label {} at row {i} out of range", labels[i]));
        }
        Ok(Self { pred: probs.argmax(), max_prob: probs.max_probs(), labels, n_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdFitConfig {
    /// Required accuracy of the selected pseudo-labels of each class.
    pub target_t: f64,
    /// Number of classes sharing one threshold.
    pub group_size: usize,
    /// A group predicted for less than `1 / e1` of its fair share falls back to 0.
    pub e1: usize,
    /// A group with a member class of fewer than `e2` holdout samples falls back to 0.
    pub e2: usize,
    /// Enables the two small-group fallbacks above, which also floor `pi`.
    pub pi_floor_rule: bool,
}

impl Default for ThresholdFitConfig {
    fn default() -> Self {
        Self { target_t: 0.75, group_size: 1, e1: 10, e2: 10, pi_floor_rule: true }
    }
}

impl ThresholdFitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_t > 0.0 && self.target_t < 1.0) {
            return invalid(format!("target_t must lie in (0, 1), got {}", self.target_t));
        }
        if self.group_size == 0 {
            return invalid("group_size must be at least 1");
        }
        if self.e1 == 0 || self.e2 == 0 {
            return invalid("e1 and e2 must be at least 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFitReport {
    pub tau: ThresholdVector,
    /// Classes whose threshold was forced to 0.
    #[serde(rename = "fallback")]
    pub fallback_classes: BTreeSet<usize>,
    /// Classes whose offset must be lowered to the smallest offset.
    #[serde(rename = "pi_floor")]
    pub pi_floor_classes: BTreeSet<usize>,
}

/// Weighted accuracy of class-`c` predictions whose confidence exceeds `tau_c`.
///
/// `None` when nothing is selected.
pub fn selected_accuracy(
    holdout: &ScoredHoldout,
    weights: &ClassWeights,
    class_c: usize,
    tau_c: f64,
) -> Result<Option<f64>> {
    check_dim("class weights", holdout.n_classes(), weights.len())?;
    if class_c >= holdout.n_classes() {
        return invalid(format!("class {class_c} out of range"));
    }
    let mut members = vec![false; holdout.n_classes()];
    members[class_c] = true;
    Ok(group_accuracy(holdout, weights, &members, tau_c))
}

fn group_accuracy(
    holdout: &ScoredHoldout,
    weights: &ClassWeights,
    members: &[bool],
    tau: f64,
) -> Option<f64> {
    let mut hit = 0.0;
    let mut selected = 0.0;
    for ((&p, &y), &m) in holdout.pred.iter().zip(&holdout.labels).zip(&holdout.max_prob) {
        if members[p] && m > tau {
            let w = weights.get(y);
            selected += w;
            if p == y {
                hit += w;
            }
        }
    }
    (selected > 0.0).then(|| hit / selected)
}

/// Zero followed by the midpoints of consecutive distinct sorted values.
pub fn candidate_thresholds(max_probs: &[f64]) -> Vec<f64> {
    let mut v = max_probs.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    let mut out = Vec::with_capacity(v.len());
    out.push(0.0);
    out.extend(v.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    out
}

/// Relative tolerance when comparing `|A - t|` across candidates.
const TIE_EPS: f64 = 1e-12;

/// Consecutive groups of `group_size` classes, ordered by holdout class count
/// (descending, stable) when grouping is active. A short final group is merged
/// into the one before it.
pub fn class_groups(counts: &[usize], group_size: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..counts.len()).collect();
    if group_size > 1 {
        order.sort_by(|&a, &b| counts[b].cmp(&counts[a]));
    }
    let mut groups: Vec<Vec<usize>> = order.chunks(group_size).map(<[usize]>::to_vec).collect();
    if groups.len() > 1 && groups.last().is_some_and(|g| g.len() < group_size) {
        let tail = groups.pop().unwrap();
        groups.last_mut().unwrap().extend(tail);
    }
    groups
}

/// Fits one threshold per class (or per group of classes).
pub fn fit_thresholds(
    holdout: &ScoredHoldout,
    weights: &ClassWeights,
    cfg: &ThresholdFitConfig,
) -> Result<ThresholdFitReport> {
    cfg.validate()?;
    if holdout.is_empty() {
        return invalid("cannot fit thresholds on an empty holdout");
    }
    let n_classes = holdout.n_classes();
    check_dim("class weights", n_classes, weights.len())?;

    let counts = class_counts(&holdout.labels, n_classes);
    let total_weight: f64 = holdout.labels.iter().map(|&y| weights.get(y)).sum();

    let mut tau = vec![0.0; n_classes];
    let mut fallback = BTreeSet::new();
    let mut pi_floor = BTreeSet::new();

    for group in class_groups(&counts, cfg.group_size) {
        let mut members = vec![false; n_classes];
        for &c in &group {
            members[c] = true;
        }

        let mut predicted_weight = 0.0;
        let mut correct_weight = 0.0;
        let mut confidences = Vec::new();
        for ((&p, &y), &m) in holdout.pred.iter().zip(&holdout.labels).zip(&holdout.max_prob) {
            if members[p] {
                let w = weights.get(y);
                predicted_weight += w;
                if p == y {
                    correct_weight += w;
                }
                confidences.push(m);
            }
        }

        if cfg.pi_floor_rule {
            let fair_share = group.len() as f64 * total_weight / (cfg.e1 * n_classes) as f64;
            let too_rare = predicted_weight < fair_share;
            let too_few = group.iter().any(|&c| counts[c] < cfg.e2);
            if too_rare || too_few {
                fallback.extend(group.iter().copied());
                pi_floor.extend(group.iter().copied());
                continue;
            }
        }

        let alpha = (predicted_weight > 0.0).then(|| correct_weight / predicted_weight);
        let Some(alpha) = alpha.filter(|&a| a > cfg.target_t) else {
            fallback.extend(group.iter().copied());
            continue;
        };
        debug_assert!(alpha <= 1.0 + 1e-12);

        let mut best: Option<(f64, f64)> = None;
        for cand in candidate_thresholds(&confidences) {
            let Some(acc) = group_accuracy(holdout, weights, &members, cand) else {
                continue;
            };
            let err = (acc - cfg.target_t).abs();
            match best {
                Some((_, best_err)) if err >= best_err - TIE_EPS => {}
                _ => best = Some((cand, err)),
            }
        }
        match best {
            Some((t, _)) => group.iter().for_each(|&c| tau[c] = t),
            None => fallback.extend(group.iter().copied()),
        }
    }

    Ok(ThresholdFitReport { tau: ThresholdVector::new(tau)?, fallback_classes: fallback, pi_floor_classes: pi_floor })
}

/// Lowers the offsets of `classes` to the current minimum offset, then re-gauges.
pub fn apply_pi_floor(pi: &OffsetVector, classes: &BTreeSet<usize>) -> Result<OffsetVector> {
    if classes.is_empty() {
        return Ok(pi.clone());
    }
    let floor = pi.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
    let mut values = pi.as_slice().to_vec();
    for &c in classes {
        if c >= values.len() {
            return invalid(format!("pi-floor class {c} out of range"));
        }
        values[c] = floor;
    }
    OffsetVector::new(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn holdout(pred: &[usize], max_prob: &[f64], labels: &[usize], c: usize) -> ScoredHoldout {
        // two-class-style rows rebuilt from (pred, max_prob) are enough here
        let mut rows = Vec::new();
        for (&p, &m) in pred.iter().zip(max_prob) {
            let rest = (1.0 - m) / (c - 1) as f64;
            let mut r = vec![rest; c];
            r[p] = m;
            rows.push(r);
        }
        ScoredHoldout::new(&ProbMatrix::from_rows(&rows).unwrap(), labels.to_vec()).unwrap()
    }

    #[test]
    fn hand_built_selected_accuracy() {
        // class-0 predictions with confidences 0.9, 0.8, 0.6, truths 0, 1, 0
        let h = holdout(&[0, 0, 0, 1, 1], &[0.9, 0.8, 0.6, 0.7, 0.9], &[0, 1, 0, 1, 1], 2);
        let w = ClassWeights::uniform(2);
        assert_eq!(selected_accuracy(&h, &w, 0, 0.7).unwrap(), Some(0.5));
        // tau = 0 gives plain precision of class 0
        assert_eq!(selected_accuracy(&h, &w, 0, 0.0).unwrap(), Some(2.0 / 3.0));
        assert_eq!(selected_accuracy(&h, &w, 0, 1.0).unwrap(), None);
    }

    #[test]
    fn candidates() {
        assert_eq!(candidate_thresholds(&[0.2, 0.8]), vec![0.0, 0.5]);
        assert_eq!(candidate_thresholds(&[0.5, 0.5, 0.5]), vec![0.0]);
        assert_eq!(candidate_thresholds(&[]), vec![0.0]);
        assert_eq!(candidate_thresholds(&[0.9, 0.5, 0.7]), vec![0.0, 0.6, 0.8]);
    }

    #[test]
    fn low_precision_class_falls_back() {
        let h = holdout(&[0, 0, 0, 0], &[0.9, 0.8, 0.7, 0.6], &[0, 1, 1, 0], 2);
        let cfg = ThresholdFitConfig { pi_floor_rule: false, ..Default::default() };
        let rep = fit_thresholds(&h, &ClassWeights::uniform(2), &cfg).unwrap();
        assert_eq!(rep.tau.as_slice()[0], 0.0);
        assert!(rep.fallback_classes.contains(&0));
        assert!(rep.pi_floor_classes.is_empty());
    }

    #[test]
    fn search_hits_target() {
        // confidences descending with correctness pattern: top 3 right, then wrong
        let h = holdout(
            &[0, 0, 0, 0, 0, 1],
            &[0.95, 0.9, 0.85, 0.8, 0.7, 0.9],
            &[0, 0, 0, 1, 0, 1],
            2,
        );
        let cfg = ThresholdFitConfig { target_t: 0.75, pi_floor_rule: false, ..Default::default() };
        let rep = fit_thresholds(&h, &ClassWeights::uniform(2), &cfg).unwrap();
        // alpha_0 = 4/5 > 0.75; A(0)=0.8, A(0.75)=0.75 exactly
        assert!((rep.tau.as_slice()[0] - 0.75).abs() < 1e-12);
        // class 1 is all correct: smallest candidate wins
        assert_eq!(rep.tau.as_slice()[1], 0.0);
        assert!(rep.fallback_classes.is_empty());
    }

    #[test]
    fn groups_merge_remainder_and_sort_by_count() {
        let g = class_groups(&[1, 5, 3, 9, 2], 2);
        assert_eq!(g, vec![vec![3, 1], vec![2, 4, 0]]);
        assert_eq!(class_groups(&[1, 5], 1), vec![vec![0], vec![1]]);
        assert_eq!(class_groups(&[1, 5], 4), vec![vec![1, 0]]);
    }

    #[test]
    fn pi_floor_sets_minimum() {
        let pi = OffsetVector::new(vec![4.0, 1.0, 0.25]).unwrap();
        let floored = apply_pi_floor(&pi, &BTreeSet::from([0])).unwrap();
        let v = floored.as_slice();
        assert!((v[0] - v[2]).abs() < 1e-12);
    }

    #[test]
    fn empty_holdout_rejected() {
        let h = ScoredHoldout::new(&ProbMatrix::new(vec![], 0, 2).unwrap(), vec![]).unwrap();
        assert!(fit_thresholds(&h, &ClassWeights::uniform(2), &ThresholdFitConfig::default()).is_err());
    }

    #[test]
    fn report_json_shape() {
        let rep = ThresholdFitReport {
            tau: ThresholdVector::new(vec![0.5, 0.0]).unwrap(),
            fallback_classes: BTreeSet::from([1]),
            pi_floor_classes: BTreeSet::new(),
        };
        let s = serde_json::to_string(&rep).unwrap();
        assert_eq!(s, r#"{"tau":[0.5,0.0],"fallback":[1],"pi_floor":[]}"#);
        let back: ThresholdFitReport = serde_json::from_str(&s).unwrap();
        assert_eq!(back, rep);
        assert!(serde_json::from_str::<ThresholdVector>("[1.5]").is_err());
    }
}
