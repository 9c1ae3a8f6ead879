//! The schedule of (offsets, thresholds) pairs learned during the estimation
//! phase and replayed during the final training run.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Result};
use crate::logits::LabeledBatch;
use crate::offsets::{apply_offsets, fit_offsets, OffsetFit, OffsetFitConfig, OffsetVector};
use crate::thresholds::{
    apply_pi_floor, fit_thresholds, ClassWeights, ScoredHoldout, ThresholdFitConfig,
    ThresholdFitReport, ThresholdVector,
};

/// Threshold every class starts from before the first estimate.
pub const INITIAL_TAU: f64 = 0.95;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurriculumConfig {
    pub length_l: usize,
    pub eta_pi: f64,
    pub eta_tau: f64,
    pub total_iters_t: usize,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self { length_l: 50, eta_pi: 0.999, eta_tau: 0.999, total_iters_t: 20_000 }
    }
}

impl CurriculumConfig {
    pub fn validate(&self) -> Result<()> {
        if self.length_l == 0 {
            return invalid("curriculum length L must be at least 1");
        }
        if self.total_iters_t < self.length_l {
            return invalid(format!(
                "total iterations T ({}) must be at least the curriculum length L ({})",
                self.total_iters_t, self.length_l
            ));
        }
        for (name, eta) in [("eta_pi", self.eta_pi), ("eta_tau", self.eta_tau)] {
            if !(0.0..=1.0).contains(&eta) {
                return invalid(format!("{name} must lie in [0, 1], got {eta}"));
            }
        }
        Ok(())
    }

    /// Iterations between two estimates.
    pub fn estimation_interval(&self) -> usize {
        (self.total_iters_t / self.length_l).max(1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Estimation,
    Replay,
}

/// Curriculum step for a 1-based iteration.
///
/// Replay: `ceil(iter * L / T)`, clamped to `[1, L]`.
/// Estimation: `Some(l)` when an estimate is due at `iter`, else `None`. Estimates
/// fire every `floor(T / L)` iterations; when `L` does not divide `T` the last one
/// is postponed to `iter = T`, so exactly `L` estimates happen.
pub fn step_index(iter: usize, cfg: &CurriculumConfig, phase: Phase) -> Option<usize> {
    let (t, l) = (cfg.total_iters_t, cfg.length_l);
    match phase {
        Phase::Replay => {
            let step = (iter * l).div_ceil(t);
            Some(step.clamp(1, l))
        }
        Phase::Estimation => {
            let every = cfg.estimation_interval();
            if iter == t {
                return Some(l);
            }
            (iter.is_multiple_of(every) && iter / every < l).then_some(iter / every)
        }
    }
}

/// `eta * prev + (1 - eta) * new`, elementwise.
pub fn ema_update(prev: &[f64], new: &[f64], eta: f64) -> Result<Vec<f64>> {
    check_dim("ema input length", prev.len(), new.len())?;
    if !(0.0..=1.0).contains(&eta) {
        return invalid(format!("eta must lie in [0, 1], got {eta}"));
    }
    Ok(prev.iter().zip(new).map(|(p, n)| eta * p + (1.0 - eta) * n).collect())
}

/// Splits a labeled set into a training half and a holdout half.
///
/// Returns sample indices `(train, holdout)`. Stratified mode halves every
/// class; a class with an odd count gives its extra sample to whichever half
/// is currently smaller (holdout on ties), except single-sample classes, which
/// always go to the holdout so the class weight `1 / k` stays defined.
pub fn partition_indices(
    labels: &[usize],
    n_classes: usize,
    seed: u64,
    stratified: bool,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if labels.len() < 2 {
        return invalid(format!("partition needs at least 2 samples, got {}", labels.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(labels.len() / 2 + 1);
    let mut holdout = Vec::with_capacity(labels.len() / 2 + 1);

    if !stratified {
        let mut idx: Vec<usize> = (0..labels.len()).collect();
        idx.shuffle(&mut rng);
        let half = labels.len() / 2;
        train.extend_from_slice(&idx[..half]);
        holdout.extend_from_slice(&idx[half..]);
    } else {
        let mut by_class = vec![Vec::new(); n_classes];
        for (i, &y) in labels.iter().enumerate() {
            if y >= n_classes {
                return invalid(format!("label {y} at row {i} out of range"));
            }
            by_class[y].push(i);
        }
        for members in &mut by_class {
            members.shuffle(&mut rng);
            let n = members.len();
            let mut to_holdout = n / 2;
            if n % 2 == 1 && (n == 1 || holdout.len() <= train.len()) {
                to_holdout += 1;
            }
            holdout.extend_from_slice(&members[..to_holdout]);
            train.extend_from_slice(&members[to_holdout..]);
        }
    }
    train.sort_unstable();
    holdout.sort_unstable();
    Ok((train, holdout))
}

/// [`partition_indices`] applied to a labeled batch of logits.
pub fn partition(labeled: &LabeledBatch, seed: u64, stratified: bool) -> Result<(LabeledBatch, LabeledBatch)> {
    let (train, holdout) = partition_indices(&labeled.labels, labeled.n_classes(), seed, stratified)?;
    let take = |idx: &[usize]| {
        LabeledBatch::new(
            labeled.logits.select_rows(idx),
            idx.iter().map(|&i| labeled.labels[i]).collect(),
        )
    };
    Ok((take(&train)?, take(&holdout)?))
}

/// Settings for one estimation step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    pub offsets: OffsetFitConfig,
    pub thresholds: ThresholdFitConfig,
    /// Fit thresholds on offset-refined holdout probabilities (otherwise raw).
    pub refine_before_thresholds: bool,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            offsets: OffsetFitConfig::default(),
            thresholds: ThresholdFitConfig::default(),
            refine_before_thresholds: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    /// Offsets after the pi-floor rule.
    pub pi: OffsetVector,
    pub thresholds: ThresholdFitReport,
    pub offset_fit: OffsetFit,
}

/// One full estimation: offsets first, then thresholds, then the pi-floor rule.
pub fn estimate_step(holdout: &LabeledBatch, weights: &ClassWeights, cfg: &EstimateConfig) -> Result<Estimate> {
    let offset_fit = fit_offsets(holdout, &cfg.offsets)?;
    let probs = if cfg.refine_before_thresholds {
        apply_offsets(&holdout.logits, &offset_fit.pi)?.softmax()
    } else {
        holdout.logits.softmax()
    };
    let scored = ScoredHoldout::new(&probs, holdout.labels.clone())?;
    let thresholds = fit_thresholds(&scored, weights, &cfg.thresholds)?;
    let pi = apply_pi_floor(&offset_fit.pi, &thresholds.pi_floor_classes)?;
    Ok(Estimate { pi, thresholds, offset_fit })
}

/// One persisted curriculum entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurriculumStep {
    pub l: usize,
    pub pi: OffsetVector,
    pub tau: ThresholdVector,
}

/// Single-writer state of the estimation phase.
#[derive(Clone, Debug, PartialEq)]
pub struct CurriculumState {
    pub pi_ema: OffsetVector,
    pub tau_ema: ThresholdVector,
    pub pi_raw_last: OffsetVector,
    history: Vec<CurriculumStep>,
}

impl CurriculumState {
    pub fn new(n_classes: usize) -> Self {
        Self {
            pi_ema: OffsetVector::ones(n_classes),
            tau_ema: ThresholdVector::constant(n_classes, INITIAL_TAU).expect("constant in range"),
            pi_raw_last: OffsetVector::ones(n_classes),
            history: Vec::new(),
        }
    }

    /// Number of completed estimation steps.
    pub fn step_l(&self) -> usize {
        self.history.len()
    }

    pub fn history(&self) -> &[CurriculumStep] {
        &self.history
    }

    /// Blends a fresh estimate into the running averages and appends a step.
    pub fn record(&mut self, pi_star: &OffsetVector, tau_star: &ThresholdVector, cfg: &CurriculumConfig) -> Result<()> {
        let pi = ema_update(self.pi_ema.as_slice(), pi_star.as_slice(), cfg.eta_pi)?;
        let tau = ema_update(self.tau_ema.as_slice(), tau_star.as_slice(), cfg.eta_tau)?;
        self.pi_ema = OffsetVector::new(pi)?;
        // convex combination of values in [0, 1]; clamp rounding only
        self.tau_ema = ThresholdVector::new(tau.into_iter().map(|t| t.clamp(0.0, 1.0)).collect())?;
        self.pi_raw_last = pi_star.clone();
        self.history.push(CurriculumStep {
            l: self.history.len() + 1,
            pi: self.pi_ema.clone(),
            tau: self.tau_ema.clone(),
        });
        Ok(())
    }

    pub fn finish(&self, length_l: usize) -> Result<Curriculum> {
        if self.history.len() != length_l {
            return invalid(format!(
                "curriculum has {} steps, expected {length_l}",
                self.history.len()
            ));
        }
        Ok(Curriculum {
            length_l,
            steps: self.history.clone(),
            pi_final_raw: self.pi_raw_last.clone(),
        })
    }
}

/// The interchange file between an estimation run and a replay run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curriculum {
    #[serde(rename = "L")]
    pub length_l: usize,
    pub steps: Vec<CurriculumStep>,
    pub pi_final_raw: OffsetVector,
}

impl Curriculum {
    pub fn validate(&self) -> Result<()> {
        check_dim("curriculum steps", self.length_l, self.steps.len())?;
        let c = self.pi_final_raw.len();
        for (i, s) in self.steps.iter().enumerate() {
            if s.l != i + 1 {
                return invalid(format!("curriculum step {i} has l = {}, expected {}", s.l, i + 1));
            }
            check_dim("curriculum pi length", c, s.pi.len())?;
            check_dim("curriculum tau length", c, s.tau.len())?;
        }
        Ok(())
    }

    /// Parameters for 1-based step `l`.
    pub fn step(&self, l: usize) -> &CurriculumStep {
        &self.steps[l - 1]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
