//! Small differentiable classifiers trained with plain SGD.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Result};
use crate::logits::{softmax_into, LogitMatrix};
use crate::synthdata::Features;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    LinearSoftmax,
    /// One tanh hidden layer.
    Mlp { hidden: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub n_classes: usize,
    pub init_seed: u64,
}

impl ModelSpec {
    pub fn n_params(&self) -> usize {
        let (d, c) = (self.input_dim, self.n_classes);
        match self.kind {
            ModelKind::LinearSoftmax => c * d + c,
            ModelKind::Mlp { hidden: h } => h * d + h + c * h + c,
        }
    }
}

/// Parameters live in one flat vector:
/// linear `[W (C x d), b (C)]`, mlp `[W1 (h x d), b1 (h), W2 (C x h), b2 (C)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: Vec<f64>,
}

impl Model {
    /// Weights drawn from `N(0, 1 / fan_in)`, biases zero.
    pub fn init(spec: ModelSpec) -> Result<Self> {
        if spec.input_dim == 0 || spec.n_classes < 2 {
            return invalid("model needs input_dim >= 1 and at least 2 classes");
        }
        if let ModelKind::Mlp { hidden: 0 } = spec.kind {
            return invalid("mlp hidden width must be at least 1");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.init_seed);
        let mut normal = |n: usize, fan_in: usize| -> Vec<f64> {
            let s = 1.0 / (fan_in as f64).sqrt();
            (0..n).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect()
        };
        let (d, c) = (spec.input_dim, spec.n_classes);
        let params = match spec.kind {
            ModelKind::LinearSoftmax => {
                let mut p = normal(c * d, d);
                p.extend(std::iter::repeat_n(0.0, c));
                p
            }
            ModelKind::Mlp { hidden: h } => {
                let mut p = normal(h * d, d);
                p.extend(std::iter::repeat_n(0.0, h));
                p.extend(normal(c * h, h));
                p.extend(std::iter::repeat_n(0.0, c));
                p
            }
        };
        Ok(Self { spec, params })
    }

    pub fn with_params(spec: ModelSpec, params: Vec<f64>) -> Result<Self> {
        check_dim("model parameters", spec.n_params(), params.len())?;
        Ok(Self { spec, params })
    }

    fn logits_row(&self, x: &[f64], hidden: &mut Vec<f64>, out: &mut Vec<f64>) {
        let (d, c) = (self.spec.input_dim, self.spec.n_classes);
        out.clear();
        match self.spec.kind {
            ModelKind::LinearSoftmax => {
                let (w, b) = self.params.split_at(c * d);
                for k in 0..c {
                    out.push(b[k] + dot(&w[k * d..(k + 1) * d], x));
                }
            }
            ModelKind::Mlp { hidden: h } => {
                let (w1, rest) = self.params.split_at(h * d);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(c * h);
                hidden.clear();
                for j in 0..h {
                    hidden.push((b1[j] + dot(&w1[j * d..(j + 1) * d], x)).tanh());
                }
                for k in 0..c {
                    out.push(b2[k] + dot(&w2[k * h..(k + 1) * h], hidden));
                }
            }
        }
    }

    pub fn forward(&self, x: &Features) -> Result<LogitMatrix> {
        check_dim("input dimension", self.spec.input_dim, x.dim())?;
        let c = self.spec.n_classes;
        let mut values = Vec::with_capacity(x.n_samples() * c);
        let mut hidden = Vec::new();
        let mut row = Vec::with_capacity(c);
        for xi in x.rows() {
            self.logits_row(xi, &mut hidden, &mut row);
            values.extend_from_slice(&row);
        }
        LogitMatrix::new(values, x.n_samples(), c)
    }

    /// Adds `scale * sum_i weight_i * CE(target_i, softmax(f(x_i)))` to the
    /// returned loss and its gradient to `grad`.
    pub fn accumulate_cross_entropy(
        &self,
        x: &Features,
        targets: &[usize],
        weights: &[f64],
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        check_dim("input dimension", self.spec.input_dim, x.dim())?;
        check_dim("targets", x.n_samples(), targets.len())?;
        check_dim("sample weights", x.n_samples(), weights.len())?;
        check_dim("gradient buffer", self.params.len(), grad.len())?;
        let (d, c) = (self.spec.input_dim, self.spec.n_classes);
        let mut hidden = Vec::new();
        let mut z = Vec::with_capacity(c);
        let mut p = Vec::with_capacity(c);
        let mut dh = Vec::new();
        let mut loss = 0.0;
        for ((xi, &y), &w) in x.rows().zip(targets).zip(weights) {
            if w == 0.0 {
                continue;
            }
            if y >= c {
                return invalid(format!("target {y} out of range"));
            }
            self.logits_row(xi, &mut hidden, &mut z);
            p.clear();
            softmax_into(&z, &mut p);
            let lse = crate::logits::log_sum_exp(&z);
            loss += scale * w * (lse - z[y]);
            // dL/dz = scale * w * (p - onehot)
            let f = scale * w;
            for (k, pk) in p.iter_mut().enumerate() {
                *pk = f * (*pk - f64::from(u8::from(k == y)));
            }
            let dz = &p;
            match self.spec.kind {
                ModelKind::LinearSoftmax => {
                    let (gw, gb) = grad.split_at_mut(c * d);
                    for k in 0..c {
                        axpy(dz[k], xi, &mut gw[k * d..(k + 1) * d]);
                        gb[k] += dz[k];
                    }
                }
                ModelKind::Mlp { hidden: h } => {
                    let w2 = &self.params[h * d + h..h * d + h + c * h];
                    let (gw1, rest) = grad.split_at_mut(h * d);
                    let (gb1, rest) = rest.split_at_mut(h);
                    let (gw2, gb2) = rest.split_at_mut(c * h);
                    dh.clear();
                    dh.resize(h, 0.0);
                    for k in 0..c {
                        axpy(dz[k], &hidden, &mut gw2[k * h..(k + 1) * h]);
                        gb2[k] += dz[k];
                        axpy(dz[k], &w2[k * h..(k + 1) * h], &mut dh);
                    }
                    for j in 0..h {
                        let da = dh[j] * (1.0 - hidden[j] * hidden[j]);
                        axpy(da, xi, &mut gw1[j * d..(j + 1) * d]);
                        gb1[j] += da;
                    }
                }
            }
        }
        Ok(loss)
    }

    pub fn sgd_step(&mut self, grad: &[f64], lr: f64) {
        axpy(-lr, grad, &mut self.params);
    }
}

/// Exponential moving average of model parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct EmaModel {
    pub model: Model,
    pub decay: f64,
}

impl EmaModel {
    pub fn new(model: &Model, decay: f64) -> Self {
        Self { model: model.clone(), decay }
    }

    /// `ema = decay * ema + (1 - decay) * live`.
    pub fn update(&mut self, live: &Model) {
        let d = self.decay;
        for (e, p) in self.model.params.iter_mut().zip(&live.params) {
            *e = d * *e + (1.0 - d) * p;
        }
    }
}

/// Batch objective of one training step: labeled cross-entropy averaged over
/// the labeled batch plus `unlabeled_weight` times the masked pseudo-label
/// cross-entropy averaged over the whole unlabeled batch.
pub struct StepBatch<'a> {
    pub labeled_x: &'a Features,
    pub labeled_y: &'a [usize],
    pub unlabeled_x: &'a Features,
    pub pseudo_labels: &'a [usize],
    pub mask: &'a [bool],
    pub unlabeled_weight: f64,
}

pub fn objective_and_grad(model: &Model, batch: &StepBatch<'_>) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; model.params.len()];
    let nl = batch.labeled_x.n_samples();
    let mut loss = 0.0;
    if nl > 0 {
        let ones = vec![1.0; nl];
        loss += model.accumulate_cross_entropy(batch.labeled_x, batch.labeled_y, &ones, 1.0 / nl as f64, &mut grad)?;
    }
    let nu = batch.unlabeled_x.n_samples();
    if nu > 0 && batch.unlabeled_weight != 0.0 {
        check_dim("mask", nu, batch.mask.len())?;
        let w: Vec<f64> = batch.mask.iter().map(|&m| f64::from(u8::from(m))).collect();
        loss += model.accumulate_cross_entropy(
            batch.unlabeled_x,
            batch.pseudo_labels,
            &w,
            batch.unlabeled_weight / nu as f64,
            &mut grad,
        )?;
    }
    Ok((loss, grad))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}
