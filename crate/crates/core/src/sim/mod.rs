//! Desk-scale end-to-end imbalanced semi-supervised training.
//!
//! A SEVAL run has two phases. The estimation phase trains on one half of the
//! labeled set and, every `floor(T / L)` iterations, fits offsets and
//! thresholds on the other half using the EMA model, blending them into a
//! curriculum. The replay phase starts from fresh weights, trains on the whole
//! labeled set and reads `(pi, tau)` from the curriculum. Test predictions are
//! finally adjusted by the last raw offset estimate.
//!
//! Baseline methods run the replay phase alone with fixed or heuristic
//! `(pi, tau)`.

pub mod baselines;
pub mod model;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::curriculum::{
    estimate_step, partition_indices, step_index, Curriculum, CurriculumConfig, CurriculumState,
    EstimateConfig, Phase,
};
use crate::error::{invalid, Result};
use crate::logits::{class_counts, LabeledBatch, LogitMatrix, ProbMatrix};
use crate::metrics::{
    accuracy, balanced_accuracy, classwise_pr, correctness, cumulative_gain, gain, write_metrics_csv,
    ClassPR, MetricsRow,
};
use crate::offsets::{apply_offsets, la_offsets, OffsetVector};
use crate::pl_engine::{select_mask, PseudoBatch};
use crate::synthdata::{generate, Features, LabeledFeatures, SynthDataset, SynthSpec};
use crate::thresholds::{ClassWeights, ThresholdVector};

use baselines::{da_refine, flex_like_thresholds, post_hoc_adjust, LearningStatus, RunningMarginal};
use model::{objective_and_grad, EmaModel, Model, ModelKind, ModelSpec, StepBatch};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Method {
    Seval,
    /// Unrefined pseudo-labels with one threshold for all classes.
    FixedThreshold { tau: f64 },
    /// Offsets from labeled class frequencies raised to `lambda`.
    La { lambda: f64, tau: f64 },
    /// Distribution alignment towards the labeled class prior.
    Da { tau: f64 },
    /// Thresholds scaled by each class's share of confident predictions.
    FlexLike { tau_base: f64 },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Seval => "seval",
            Method::FixedThreshold { .. } => "fixed_threshold",
            Method::La { .. } => "la",
            Method::Da { .. } => "da",
            Method::FlexLike { .. } => "flex_like",
        }
    }

    fn validate(&self) -> Result<()> {
        let tau = match self {
            Method::Seval => return Ok(()),
            Method::FixedThreshold { tau } | Method::La { tau, .. } | Method::Da { tau } => *tau,
            Method::FlexLike { tau_base } => *tau_base,
        };
        if !(0.0..=1.0).contains(&tau) {
            return invalid(format!("{} threshold must lie in [0, 1], got {tau}", self.name()));
        }
        if let Method::La { lambda, .. } = self {
            if !lambda.is_finite() {
                return invalid("la lambda must be finite");
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub length_l: usize,
    pub eta_pi: f64,
    pub eta_tau: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { length_l: 50, eta_pi: 0.99, eta_tau: 0.99 }
    }
}

/// Input perturbations standing in for weak and strong image augmentation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub weak_noise_sd: f64,
    pub strong_noise_sd: f64,
    /// Probability of zeroing each feature of a strong view.
    pub strong_dropout: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { weak_noise_sd: 0.05, strong_noise_sd: 0.2, strong_dropout: 0.2 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoldoutWeighting {
    Uniform,
    /// `1 / k_c` with `k_c` the holdout count of class `c`.
    InverseFrequency,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::total_iters")]
    pub total_iters: usize,
    #[serde(default = "defaults::labeled_batch")]
    pub labeled_batch: usize,
    #[serde(default = "defaults::unlabeled_batch")]
    pub unlabeled_batch: usize,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::ema_decay")]
    pub ema_decay: f64,
    #[serde(default = "defaults::unlabeled_weight")]
    pub unlabeled_weight: f64,
    #[serde(default = "defaults::model")]
    pub model: ModelKind,
    #[serde(default)]
    pub curriculum: ScheduleConfig,
    /// Defaults to a class-balanced offset fit, since the holdout half of a
    /// long-tailed labeled set is itself long-tailed.
    #[serde(default = "defaults::estimate", deserialize_with = "defaults::partial_estimate")]
    pub estimate: EstimateConfig,
    #[serde(default = "defaults::weighting")]
    pub holdout_weighting: HoldoutWeighting,
    #[serde(default = "defaults::yes")]
    pub stratified_partition: bool,
    #[serde(default)]
    pub augment: AugmentConfig,
    /// Iterations between metric rows; 0 picks `T / 100`.
    #[serde(default)]
    pub eval_every: usize,
    #[serde(default = "defaults::ema_decay")]
    pub da_decay: f64,
}

mod defaults {
    use super::*;

    pub fn total_iters() -> usize {
        20_000
    }
    pub fn labeled_batch() -> usize {
        64
    }
    pub fn unlabeled_batch() -> usize {
        128
    }
    pub fn learning_rate() -> f64 {
        0.03
    }
    pub fn ema_decay() -> f64 {
        0.999
    }
    pub fn unlabeled_weight() -> f64 {
        1.0
    }
    pub fn model() -> ModelKind {
        ModelKind::Mlp { hidden: 32 }
    }
    pub fn estimate() -> EstimateConfig {
        let mut e = EstimateConfig::default();
        e.offsets.class_balanced = true;
        e
    }
    /// Fields given in the config replace those of [`estimate`], recursively.
    pub fn partial_estimate<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<EstimateConfig, D::Error> {
        use serde::de::Error as _;
        let given = serde_json::Value::deserialize(d)?;
        let mut merged = serde_json::to_value(estimate()).map_err(D::Error::custom)?;
        merge(&mut merged, given);
        serde_json::from_value(merged).map_err(D::Error::custom)
    }
    fn merge(base: &mut serde_json::Value, given: serde_json::Value) {
        match (base, given) {
            (serde_json::Value::Object(b), serde_json::Value::Object(g)) => {
                for (k, v) in g {
                    match b.get_mut(&k) {
                        Some(slot) => merge(slot, v),
                        None => {
                            b.insert(k, v);
                        }
                    }
                }
            }
            (slot, v) => *slot = v,
        }
    }
    pub fn weighting() -> HoldoutWeighting {
        HoldoutWeighting::InverseFrequency
    }
    pub fn yes() -> bool {
        true
    }
}

impl TrainConfig {
    pub fn new(method: Method, seed: u64) -> Self {
        Self {
            method,
            seed,
            total_iters: defaults::total_iters(),
            labeled_batch: defaults::labeled_batch(),
            unlabeled_batch: defaults::unlabeled_batch(),
            learning_rate: defaults::learning_rate(),
            ema_decay: defaults::ema_decay(),
            unlabeled_weight: defaults::unlabeled_weight(),
            model: defaults::model(),
            curriculum: ScheduleConfig::default(),
            estimate: defaults::estimate(),
            holdout_weighting: defaults::weighting(),
            stratified_partition: true,
            augment: AugmentConfig::default(),
            eval_every: 0,
            da_decay: defaults::ema_decay(),
        }
    }

    pub fn curriculum_config(&self) -> CurriculumConfig {
        CurriculumConfig {
            length_l: self.curriculum.length_l,
            eta_pi: self.curriculum.eta_pi,
            eta_tau: self.curriculum.eta_tau,
            total_iters_t: self.total_iters,
        }
    }

    pub fn eval_interval(&self) -> usize {
        if self.eval_every > 0 {
            self.eval_every
        } else {
            (self.total_iters / 100).max(1)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_iters == 0 || self.labeled_batch == 0 || self.unlabeled_batch == 0 {
            return invalid("total_iters, labeled_batch and unlabeled_batch must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return invalid("learning_rate must be positive");
        }
        for (name, d) in [("ema_decay", self.ema_decay), ("da_decay", self.da_decay)] {
            if !(0.0..1.0).contains(&d) {
                return invalid(format!("{name} must lie in [0, 1), got {d}"));
            }
        }
        if !(self.unlabeled_weight >= 0.0 && self.unlabeled_weight.is_finite()) {
            return invalid("unlabeled_weight must be non-negative");
        }
        let a = &self.augment;
        if !(a.weak_noise_sd >= 0.0 && a.strong_noise_sd >= 0.0 && (0.0..1.0).contains(&a.strong_dropout)) {
            return invalid("augmentation noise must be non-negative and dropout in [0, 1)");
        }
        if let ModelKind::Mlp { hidden: 0 } = self.model {
            return invalid("mlp hidden width must be at least 1");
        }
        self.method.validate()?;
        if self.method == Method::Seval {
            self.curriculum_config().validate()?;
            self.estimate.offsets.validate()?;
            self.estimate.thresholds.validate()?;
        }
        Ok(())
    }
}

/// Test-set results of the final EMA model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestSummary {
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    /// After subtracting the final raw log-offsets (identical for baselines).
    pub accuracy_post_hoc: f64,
    pub balanced_accuracy_post_hoc: f64,
    pub class_pr: Vec<ClassPR>,
    pub class_pr_post_hoc: Vec<ClassPR>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: String,
    pub n_classes: usize,
    pub rows: Vec<MetricsRow>,
    pub test: TestSummary,
    /// Offsets and thresholds in force at the last iteration.
    pub final_pi: OffsetVector,
    pub final_tau: ThresholdVector,
    pub curriculum: Option<Curriculum>,
}

impl RunRecord {
    pub fn write_metrics_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        write_metrics_csv(out, self.n_classes, &self.rows)
    }

    pub fn summary_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Summary<'a> {
            method: &'a str,
            n_classes: usize,
            test: &'a TestSummary,
            final_pi: &'a OffsetVector,
            final_tau: &'a ThresholdVector,
        }
        Ok(serde_json::to_string_pretty(&Summary {
            method: &self.method,
            n_classes: self.n_classes,
            test: &self.test,
            final_pi: &self.final_pi,
            final_tau: &self.final_tau,
        })?)
    }
}

/// Independent sub-seed for one purpose of one run.
pub fn derive_seed(seed: u64, purpose: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1000 + purpose);
    rng.random()
}

const SEED_PARTITION: u64 = 1;
const SEED_ESTIMATION_PHASE: u64 = 2;
const SEED_MAIN_PHASE: u64 = 3;

/// Generates the dataset and trains on it.
pub fn train(spec: &SynthSpec, cfg: &TrainConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let ds = generate(spec)?;
    train_on(&ds, cfg)
}

pub fn train_on(ds: &SynthDataset, cfg: &TrainConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let c = ds.n_classes;
    let labeled_counts = class_counts(&ds.labeled.y, c);

    let (mut refiner, curriculum) = match &cfg.method {
        Method::Seval => {
            let curriculum = estimation_phase(ds, cfg)?;
            (Refiner::Replay { curriculum: curriculum.clone(), schedule: cfg.curriculum_config() }, Some(curriculum))
        }
        Method::FixedThreshold { tau } => (
            Refiner::Fixed { pi: OffsetVector::ones(c), tau: ThresholdVector::constant(c, *tau)? },
            None,
        ),
        Method::La { lambda, tau } => {
            let counts: Vec<usize> = labeled_counts.iter().map(|&n| n.max(1)).collect();
            (
                Refiner::Fixed { pi: la_offsets(&counts, *lambda)?, tau: ThresholdVector::constant(c, *tau)? },
                None,
            )
        }
        Method::Da { tau } => {
            let total: usize = labeled_counts.iter().sum();
            let target = labeled_counts.iter().map(|&n| n as f64 / total as f64).collect();
            (
                Refiner::Da {
                    marginal: RunningMarginal::new(c, cfg.da_decay),
                    target,
                    tau: ThresholdVector::constant(c, *tau)?,
                },
                None,
            )
        }
        Method::FlexLike { tau_base } => (
            Refiner::Flex { status: LearningStatus::new(ds.unlabeled.n_samples(), c), tau_base: *tau_base },
            None,
        ),
    };

    let phase = run_phase(
        ds,
        &ds.labeled,
        cfg,
        derive_seed(cfg.seed, SEED_MAIN_PHASE),
        &mut refiner,
        true,
    )?;

    let test_logits = phase.ema.model.forward(&ds.test.x)?;
    let raw = test_logits.argmax();
    let adjusted = match &curriculum {
        Some(cur) => post_hoc_adjust(&test_logits, &cur.pi_final_raw)?,
        None => raw.clone(),
    };
    let y = &ds.test.y;
    let test = TestSummary {
        accuracy: accuracy(&raw, y),
        balanced_accuracy: balanced_accuracy(&raw, y, c)?,
        accuracy_post_hoc: accuracy(&adjusted, y),
        balanced_accuracy_post_hoc: balanced_accuracy(&adjusted, y, c)?,
        class_pr: classwise_pr(&raw, y, c)?,
        class_pr_post_hoc: classwise_pr(&adjusted, y, c)?,
    };
    let (final_pi, final_tau) = refiner.params(cfg.total_iters)?;
    Ok(RunRecord {
        method: cfg.method.name().to_string(),
        n_classes: c,
        rows: phase.rows,
        test,
        final_pi,
        final_tau,
        curriculum,
    })
}

/// Trains on one half of the labeled set and learns the curriculum on the other.
fn estimation_phase(ds: &SynthDataset, cfg: &TrainConfig) -> Result<Curriculum> {
    let c = ds.n_classes;
    let (train_idx, holdout_idx) = partition_indices(
        &ds.labeled.y,
        c,
        derive_seed(cfg.seed, SEED_PARTITION),
        cfg.stratified_partition,
    )?;
    let train_half = ds.labeled.select(&train_idx);
    let holdout = ds.labeled.select(&holdout_idx);
    let weights = match cfg.holdout_weighting {
        HoldoutWeighting::Uniform => ClassWeights::uniform(c),
        HoldoutWeighting::InverseFrequency => ClassWeights::inverse_frequency(&class_counts(&holdout.y, c)),
    };
    let schedule = cfg.curriculum_config();
    let mut refiner = Refiner::Estimation {
        state: CurriculumState::new(c),
        schedule: schedule.clone(),
        holdout,
        weights,
        estimate: cfg.estimate.clone(),
    };
    run_phase(ds, &train_half, cfg, derive_seed(cfg.seed, SEED_ESTIMATION_PHASE), &mut refiner, false)?;
    match refiner {
        Refiner::Estimation { state, .. } => state.finish(schedule.length_l),
        _ => unreachable!(),
    }
}

/// Source of `(pi, tau)` and of refined pseudo-label probabilities.
enum Refiner {
    Estimation {
        state: CurriculumState,
        schedule: CurriculumConfig,
        holdout: LabeledFeatures,
        weights: ClassWeights,
        estimate: EstimateConfig,
    },
    Replay {
        curriculum: Curriculum,
        schedule: CurriculumConfig,
    },
    Fixed {
        pi: OffsetVector,
        tau: ThresholdVector,
    },
    Da {
        marginal: RunningMarginal,
        target: Vec<f64>,
        tau: ThresholdVector,
    },
    Flex {
        status: LearningStatus,
        tau_base: f64,
    },
}

impl Refiner {
    fn params(&self, iter: usize) -> Result<(OffsetVector, ThresholdVector)> {
        Ok(match self {
            Refiner::Estimation { state, .. } => (state.pi_ema.clone(), state.tau_ema.clone()),
            Refiner::Replay { curriculum, schedule } => {
                let l = step_index(iter, schedule, Phase::Replay).unwrap_or(1);
                let s = curriculum.step(l);
                (s.pi.clone(), s.tau.clone())
            }
            Refiner::Fixed { pi, tau } => (pi.clone(), tau.clone()),
            Refiner::Da { tau, .. } => (OffsetVector::ones(tau.len()), tau.clone()),
            Refiner::Flex { status, tau_base } => (
                OffsetVector::ones(status.counts().len()),
                flex_like_thresholds(status.counts(), *tau_base)?,
            ),
        })
    }

    fn refine(&self, z_hat: &LogitMatrix, pi: &OffsetVector) -> Result<ProbMatrix> {
        match self {
            Refiner::Da { marginal, target, .. } => da_refine(&z_hat.softmax(), &marginal.marginal, target),
            _ => Ok(apply_offsets(z_hat, pi)?.softmax()),
        }
    }

    /// Bookkeeping after pseudo-labels for pool samples `idx` were formed.
    fn observe(&mut self, idx: &[usize], z_hat: &LogitMatrix, q: &ProbMatrix) {
        match self {
            Refiner::Da { marginal, .. } => marginal.update(&z_hat.softmax()),
            Refiner::Flex { status, tau_base } => {
                for (k, &i) in idx.iter().enumerate() {
                    let row = q.row(k);
                    let top = crate::logits::argmax(row);
                    status.set(i, (row[top] >= *tau_base).then_some(top));
                }
            }
            _ => {}
        }
    }

    fn after_step(&mut self, iter: usize, ema: &Model) -> Result<()> {
        if let Refiner::Estimation { state, schedule, holdout, weights, estimate } = self {
            if step_index(iter, schedule, Phase::Estimation).is_some() {
                let batch = LabeledBatch::new(ema.forward(&holdout.x)?, holdout.y.clone())?;
                let est = estimate_step(&batch, weights, estimate)?;
                state.record(&est.pi, &est.thresholds.tau, schedule)?;
            }
        }
        Ok(())
    }
}

struct PhaseOutput {
    ema: EmaModel,
    rows: Vec<MetricsRow>,
}

fn weak_view(x: &Features, idx: &[usize], sd: f64, rng: &mut ChaCha8Rng) -> Result<Features> {
    let mut v = x.select_rows(idx).values().to_vec();
    for e in &mut v {
        *e += sd * rng.sample::<f64, _>(StandardNormal);
    }
    Features::new(v, idx.len(), x.dim())
}

fn strong_view(x: &Features, idx: &[usize], aug: &crate::sim::AugmentConfig, rng: &mut ChaCha8Rng) -> Result<Features> {
    let mut v = x.select_rows(idx).values().to_vec();
    for e in &mut v {
        *e += aug.strong_noise_sd * rng.sample::<f64, _>(StandardNormal);
        if rng.random::<f64>() < aug.strong_dropout {
            *e = 0.0;
        }
    }
    Features::new(v, idx.len(), x.dim())
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

fn run_phase(
    ds: &SynthDataset,
    labeled: &LabeledFeatures,
    cfg: &TrainConfig,
    phase_seed: u64,
    refiner: &mut Refiner,
    record: bool,
) -> Result<PhaseOutput> {
    let c = ds.n_classes;
    let spec = ModelSpec {
        kind: cfg.model,
        input_dim: ds.dim(),
        n_classes: c,
        init_seed: derive_seed(phase_seed, 0),
    };
    let mut live = Model::init(spec)?;
    let mut ema = EmaModel::new(&live, cfg.ema_decay);

    // one stream per purpose so the labeled pathway never depends on the pool
    let mut rng_labeled = stream(phase_seed, 1);
    let mut rng_labeled_aug = stream(phase_seed, 2);
    let mut rng_pool = stream(phase_seed, 3);
    let mut rng_pool_aug = stream(phase_seed, 4);

    let pool = &ds.unlabeled;
    let use_pool = cfg.unlabeled_weight > 0.0 && pool.n_samples() > 0;
    let labeled_idx: Vec<usize> = (0..labeled.len()).collect();
    let pool_idx: Vec<usize> = (0..pool.n_samples()).collect();
    let eval_every = cfg.eval_interval();
    let mut rows = Vec::new();
    let mut gains = Vec::new();
    let empty = Features::empty(ds.dim());

    for iter in 1..=cfg.total_iters {
        let lb: Vec<usize> = (0..cfg.labeled_batch)
            .map(|_| *labeled_idx.choose(&mut rng_labeled).expect("non-empty labeled set"))
            .collect();
        let xl = weak_view(&labeled.x, &lb, cfg.augment.weak_noise_sd, &mut rng_labeled_aug)?;
        let yl: Vec<usize> = lb.iter().map(|&i| labeled.y[i]).collect();

        let (xu, hard, mask) = if use_pool {
            let ub: Vec<usize> = (0..cfg.unlabeled_batch)
                .map(|_| *pool_idx.choose(&mut rng_pool).expect("non-empty pool"))
                .collect();
            let weak = weak_view(pool, &ub, cfg.augment.weak_noise_sd, &mut rng_pool_aug)?;
            let strong = strong_view(pool, &ub, &cfg.augment, &mut rng_pool_aug)?;
            let z_hat = ema.model.forward(&weak)?;
            let pred = live.forward(&strong)?.argmax();
            let (pi, tau) = refiner.params(iter)?;
            let q = refiner.refine(&z_hat, &pi)?;
            let mask = select_mask(&q, &pred, &tau)?;
            let hard = q.argmax();
            refiner.observe(&ub, &z_hat, &q);
            (strong, hard, mask)
        } else {
            (empty.clone(), Vec::new(), Vec::new())
        };

        let batch = StepBatch {
            labeled_x: &xl,
            labeled_y: &yl,
            unlabeled_x: &xu,
            pseudo_labels: &hard,
            mask: &mask,
            unlabeled_weight: if use_pool { cfg.unlabeled_weight } else { 0.0 },
        };
        let (loss, grad) = objective_and_grad(&live, &batch)?;
        if !loss.is_finite() {
            return Err(crate::Error::Numerical(format!("non-finite training loss at iteration {iter}")));
        }
        live.sgd_step(&grad, cfg.learning_rate);
        ema.update(&live);
        refiner.after_step(iter, &ema.model)?;

        if record && (iter % eval_every == 0 || iter == cfg.total_iters) {
            rows.push(evaluate(ds, &live, &ema.model, refiner, iter, &mut gains)?);
        }
    }
    Ok(PhaseOutput { ema, rows })
}

fn evaluate(
    ds: &SynthDataset,
    live: &Model,
    ema: &Model,
    refiner: &Refiner,
    iter: usize,
    gains: &mut Vec<f64>,
) -> Result<MetricsRow> {
    let c = ds.n_classes;
    let (pi, tau) = refiner.params(iter)?;
    let (g, corr) = if ds.unlabeled.n_samples() > 0 {
        let z_hat = ema.forward(&ds.unlabeled)?;
        let raw = z_hat.argmax();
        let q = refiner.refine(&z_hat, &pi)?;
        let hard = q.argmax();
        let pred = live.forward(&ds.unlabeled)?.argmax();
        let g = gain(&raw, &hard, &ds.oracle)?;
        let mask = select_mask(&q, &pred, &tau)?;
        let pseudo = PseudoBatch { q, hard_labels: hard, pred_labels: pred, mask };
        (g, correctness(&pseudo, &ds.oracle, &tau)?)
    } else {
        (0.0, crate::metrics::Correctness { quantity: 0.0, quality: 0.0, correctness: 0.0 })
    };
    gains.push(g);
    let cum = *cumulative_gain(gains).last().expect("just pushed");
    let test_pred = ema.forward(&ds.test.x)?.argmax();
    Ok(MetricsRow {
        iter,
        gain: g,
        cum_gain: cum,
        quantity: corr.quantity,
        quality: corr.quality,
        correctness: corr.correctness,
        balanced_accuracy: balanced_accuracy(&test_pred, &ds.test.y, c)?,
        accuracy: accuracy(&test_pred, &ds.test.y),
        class_pr: classwise_pr(&test_pred, &ds.test.y, c)?,
    })
}
