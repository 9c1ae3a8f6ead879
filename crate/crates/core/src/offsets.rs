//! Per-class logit offsets fitted on a labeled holdout.
//!
//! Refined scores are `z - log(pi)`. Softmax ignores a common additive shift,
//! so `pi` is only defined up to a positive scale; every [`OffsetVector`]
//! produced here is normalized to geometric mean one.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::logits::{log_sum_exp, LabeledBatch, LogitMatrix};

/// Positive per-class offsets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct OffsetVector {
    pi: Vec<f64>,
}

impl OffsetVector {
    /// Validates positivity and normalizes to geometric mean one.
    pub fn new(pi: Vec<f64>) -> Result<Self> {
        let v = Self::from_values(pi)?;
        Ok(v.gauge_fixed())
    }

    /// Validates positivity without rescaling.
    pub fn from_values(pi: Vec<f64>) -> Result<Self> {
        if pi.len() < 2 {
            return invalid(format!("offset vector needs at least 2 classes, got {}", pi.len()));
        }
        if let Some(c) = pi.iter().position(|p| !(p.is_finite() && *p > 0.0)) {
            return invalid(format!("offset for class {c} must be positive and finite, got {}", pi[c]));
        }
        Ok(Self { pi })
    }

    /// Gauge-fixed offsets from log-offsets.
    pub fn from_log(theta: &[f64]) -> Result<Self> {
        let pi = theta.iter().map(|t| t.exp()).collect();
        Self::new(pi)
    }

    pub fn ones(n_classes: usize) -> Self {
        Self { pi: vec![1.0; n_classes] }
    }

    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.pi
    }

    pub fn log(&self) -> Vec<f64> {
        self.pi.iter().map(|p| p.ln()).collect()
    }

    /// Rescales so that the geometric mean equals one.
    pub fn gauge_fixed(&self) -> Self {
        let theta = self.log();
        let mean = theta.iter().sum::<f64>() / theta.len() as f64;
        Self { pi: theta.iter().map(|t| (t - mean).exp()).collect() }
    }

    /// Multiplies every entry by `k > 0`. The result is deliberately not re-gauged.
    pub fn scaled(&self, k: f64) -> Result<Self> {
        Self::from_values(self.pi.iter().map(|p| p * k).collect())
    }
}

impl TryFrom<Vec<f64>> for OffsetVector {
    type Error = Error;

    fn try_from(pi: Vec<f64>) -> Result<Self> {
        Self::from_values(pi)
    }
}

impl From<OffsetVector> for Vec<f64> {
    fn from(v: OffsetVector) -> Self {
        v.pi
    }
}

/// Settings for the bound-constrained offset solver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OffsetFitConfig {
    pub max_iters: usize,
    /// Initial trial step of the line search.
    pub step_size: f64,
    /// Stop once an accepted step decreases the objective by less than this.
    pub tolerance: f64,
    /// Box on every `log(pi_c)`.
    pub log_bounds: (f64, f64),
    /// Weight each holdout sample by `1 / k_y` so every class present counts
    /// equally, as if the holdout were balanced.
    pub class_balanced: bool,
}

impl Default for OffsetFitConfig {
    fn default() -> Self {
        Self { max_iters: 10_000, step_size: 1.0, tolerance: 1e-8, log_bounds: (-10.0, 10.0), class_balanced: false }
    }
}

impl OffsetFitConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.log_bounds;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return invalid(format!("offset bounds must satisfy lower < upper, got ({lo}, {hi})"));
        }
        if !(lo <= 0.0 && 0.0 <= hi) {
            return invalid("offset bounds must contain 0 (pi = 1)");
        }
        if !(self.tolerance > 0.0) {
            return invalid("offset tolerance must be positive");
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return invalid("offset step size must be positive");
        }
        if self.max_iters == 0 {
            return invalid("offset max_iters must be at least 1");
        }
        Ok(())
    }
}

/// Result of [`fit_offsets`].
#[derive(Clone, Debug, PartialEq)]
pub struct OffsetFit {
    pub pi: OffsetVector,
    /// Mean holdout cross-entropy at `pi`.
    pub objective: f64,
    /// Mean holdout cross-entropy at `pi = 1`.
    pub initial_objective: f64,
    pub iterations: usize,
    /// `false` when `max_iters` ran out first; `pi` is then the best iterate seen.
    pub converged: bool,
}

const PROB_FLOOR: f64 = 1e-12;

/// `logits[i, c] - log(pi[c])`.
pub fn apply_offsets(logits: &LogitMatrix, pi: &OffsetVector) -> Result<LogitMatrix> {
    check_dim("offset vector length", logits.n_classes(), pi.len())?;
    let log_pi = pi.log();
    let values = logits
        .rows()
        .flat_map(|row| row.iter().zip(&log_pi).map(|(z, l)| z - l))
        .collect();
    Ok(LogitMatrix::from_raw(values, logits.n_samples(), logits.n_classes()))
}

/// Mean cross-entropy of `softmax(z - log pi)` against the hard holdout labels.
pub fn holdout_cross_entropy(holdout: &LabeledBatch, pi: &OffsetVector) -> Result<f64> {
    check_dim("offset vector length", holdout.n_classes(), pi.len())?;
    if holdout.is_empty() {
        return invalid("empty holdout");
    }
    let mut scratch = vec![0.0; pi.len()];
    let weights = vec![1.0; pi.len()];
    Ok(objective_and_grad(holdout, &weights, &pi.log(), &mut scratch, None))
}

/// Cross-entropy with every class present in the holdout weighted equally.
pub fn balanced_holdout_cross_entropy(holdout: &LabeledBatch, pi: &OffsetVector) -> Result<f64> {
    check_dim("offset vector length", holdout.n_classes(), pi.len())?;
    if holdout.is_empty() {
        return invalid("empty holdout");
    }
    let mut scratch = vec![0.0; pi.len()];
    let weights = balanced_weights(holdout);
    Ok(objective_and_grad(holdout, &weights, &pi.log(), &mut scratch, None))
}

fn balanced_weights(holdout: &LabeledBatch) -> Vec<f64> {
    holdout.class_counts().iter().map(|&k| if k > 0 { 1.0 / k as f64 } else { 0.0 }).collect()
}

fn objective_and_grad(
    holdout: &LabeledBatch,
    class_weights: &[f64],
    theta: &[f64],
    shifted: &mut [f64],
    mut grad: Option<&mut [f64]>,
) -> f64 {
    if let Some(g) = grad.as_deref_mut() {
        g.fill(0.0);
    }
    let mut total = 0.0;
    let mut mass = 0.0;
    for (row, &y) in holdout.logits.rows().zip(&holdout.labels) {
        let w = class_weights[y];
        mass += w;
        for ((s, z), t) in shifted.iter_mut().zip(row).zip(theta) {
            *s = z - t;
        }
        let lse = log_sum_exp(shifted);
        let q_y = (shifted[y] - lse).exp();
        total -= w * q_y.max(PROB_FLOOR).ln();
        if let Some(g) = grad.as_deref_mut() {
            // d/dtheta_c = 1[y = c] - q_c
            for (gc, s) in g.iter_mut().zip(shifted.iter()) {
                *gc -= w * (s - lse).exp();
            }
            g[y] += w;
        }
    }
    if let Some(g) = grad {
        g.iter_mut().for_each(|v| *v /= mass);
    }
    total / mass
}

/// Free coordinates are the log-offsets of classes present in the holdout.
/// Absent classes are tied to the mean of the free coordinates, so they sit
/// at the gauge-neutral value throughout.
struct Problem<'a> {
    holdout: &'a LabeledBatch,
    weights: Vec<f64>,
    present: Vec<usize>,
    absent: Vec<usize>,
    theta: Vec<f64>,
    shifted: Vec<f64>,
    full_grad: Vec<f64>,
}

impl<'a> Problem<'a> {
    fn new(holdout: &'a LabeledBatch, class_balanced: bool) -> Self {
        let c = holdout.n_classes();
        let counts = holdout.class_counts();
        let (present, absent) = (0..c).partition(|&j| counts[j] > 0);
        let weights = if class_balanced { balanced_weights(holdout) } else { vec![1.0; c] };
        Self {
            holdout,
            weights,
            present,
            absent,
            theta: vec![0.0; c],
            shifted: vec![0.0; c],
            full_grad: vec![0.0; c],
        }
    }

    fn expand(&mut self, x: &[f64]) {
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        for (&j, &v) in self.present.iter().zip(x) {
            self.theta[j] = v;
        }
        for &j in &self.absent {
            self.theta[j] = mean;
        }
    }

    fn value(&mut self, x: &[f64]) -> f64 {
        self.expand(x);
        objective_and_grad(self.holdout, &self.weights, &self.theta, &mut self.shifted, None)
    }

    fn value_grad(&mut self, x: &[f64], g: &mut [f64]) -> f64 {
        self.expand(x);
        let f = objective_and_grad(
            self.holdout,
            &self.weights,
            &self.theta,
            &mut self.shifted,
            Some(&mut self.full_grad),
        );
        let tied: f64 = self.absent.iter().map(|&j| self.full_grad[j]).sum::<f64>()
            / self.present.len() as f64;
        for (gi, &j) in g.iter_mut().zip(&self.present) {
            *gi = self.full_grad[j] + tied;
        }
        f
    }
}

fn project(x: &mut [f64], (lo, hi): (f64, f64)) {
    x.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes mean holdout cross-entropy of `softmax(z - log pi)` over `pi`.
/// With `cfg.class_balanced` the mean is taken per class first.
///
/// Spectral projected gradient on `theta = log pi` inside `cfg.log_bounds`,
/// with Armijo backtracking. The objective is convex in `theta`, starting
/// from `pi = 1`.
pub fn fit_offsets(holdout: &LabeledBatch, cfg: &OffsetFitConfig) -> Result<OffsetFit> {
    cfg.validate()?;
    if holdout.is_empty() {
        return invalid("cannot fit offsets on an empty holdout");
    }
    let n_classes = holdout.n_classes();
    let mut prob = Problem::new(holdout, cfg.class_balanced);
    let n = prob.present.len();

    let mut x = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut f = prob.value_grad(&x, &mut g);
    let initial_objective = f;

    let mut alpha = cfg.step_size;
    let mut trial = vec![0.0; n];
    let mut dir = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        iterations += 1;
        for i in 0..n {
            trial[i] = x[i] - alpha * g[i];
        }
        project(&mut trial, cfg.log_bounds);
        for i in 0..n {
            dir[i] = trial[i] - x[i];
        }
        let slope = dot(&g, &dir);
        if dir.iter().all(|d| d.abs() < 1e-14) || slope >= 0.0 {
            converged = true;
            break;
        }

        let mut t = 1.0;
        let mut f_new;
        loop {
            for i in 0..n {
                trial[i] = x[i] + t * dir[i];
            }
            f_new = prob.value(&trial);
            if f_new <= f + 1e-4 * t * slope || t < 1e-20 {
                break;
            }
            t *= 0.5;
        }
        if f_new > f {
            // no representable descent left
            converged = true;
            break;
        }
        f_new = prob.value_grad(&trial, &mut g_new);

        let mut ss = 0.0;
        let mut sy = 0.0;
        for i in 0..n {
            let s = trial[i] - x[i];
            let y = g_new[i] - g[i];
            ss += s * s;
            sy += s * y;
        }
        alpha = if sy > 0.0 { (ss / sy).clamp(1e-6, 1e6) } else { cfg.step_size };

        let decrease = f - f_new;
        x.copy_from_slice(&trial);
        g.copy_from_slice(&g_new);
        f = f_new;

        let pg = projected_gradient_norm(&x, &g, cfg.log_bounds);
        if decrease < cfg.tolerance && pg < 100.0 * cfg.tolerance {
            converged = true;
            break;
        }
    }

    prob.expand(&x);
    let pi = OffsetVector::from_log(&prob.theta)?;
    debug_assert_eq!(pi.len(), n_classes);
    Ok(OffsetFit { pi, objective: f, initial_objective, iterations, converged })
}

fn projected_gradient_norm(x: &[f64], g: &[f64], (lo, hi): (f64, f64)) -> f64 {
    x.iter()
        .zip(g)
        .map(|(&xi, &gi)| ((xi - gi).clamp(lo, hi) - xi).abs())
        .fold(0.0, f64::max)
}

/// Logit-adjustment baseline: `pi_c = (n_c / sum n)^lambda`, gauge-fixed.
pub fn la_offsets(class_counts: &[usize], lambda: f64) -> Result<OffsetVector> {
    if let Some(c) = class_counts.iter().position(|&n| n == 0) {
        return invalid(format!("class {c} has zero count"));
    }
    if !lambda.is_finite() {
        return invalid("lambda must be finite");
    }
    let total: usize = class_counts.iter().sum();
    let pi = class_counts
        .iter()
        .map(|&n| (n as f64 / total as f64).powf(lambda))
        .collect();
    OffsetVector::new(pi)
}
