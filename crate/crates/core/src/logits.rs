//! Dense row-major score and probability matrices shared by every module.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Result};

/// Per-sample, per-class raw scores stored row-major (`n_samples x n_classes`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogitMatrix {
    values: Vec<f64>,
    n_samples: usize,
    n_classes: usize,
}

impl LogitMatrix {
    pub fn new(values: Vec<f64>, n_samples: usize, n_classes: usize) -> Result<Self> {
        if n_classes < 2 {
            return invalid(format!("need at least 2 classes, got {n_classes}"));
        }
        check_dim("logit values", n_samples * n_classes, values.len())?;
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return invalid(format!(
                "non-finite logit at row {}, column {}",
                pos / n_classes,
                pos % n_classes
            ));
        }
        Ok(Self { values, n_samples, n_classes })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_classes = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * n_classes);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_classes {
                return invalid(format!(
                    "row {i} has {} columns, expected {n_classes}",
                    row.len()
                ));
            }
            values.extend_from_slice(row);
        }
        Self::new(values, rows.len(), n_classes)
    }

    /// Builds a matrix without the finiteness scan. Callers guarantee the invariants.
    pub(crate) fn from_raw(values: Vec<f64>, n_samples: usize, n_classes: usize) -> Self {
        debug_assert_eq!(values.len(), n_samples * n_classes);
        Self { values, n_samples, n_classes }
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_classes..(i + 1) * self.n_classes]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_classes)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, c: usize) -> f64 {
        self.values[i * self.n_classes + c]
    }

    /// Selects rows by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut values = Vec::with_capacity(idx.len() * self.n_classes);
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        Self::from_raw(values, idx.len(), self.n_classes)
    }

    /// Row-wise softmax.
    pub fn softmax(&self) -> ProbMatrix {
        let mut out = Vec::with_capacity(self.values.len());
        for row in self.rows() {
            softmax_into(row, &mut out);
        }
        ProbMatrix { values: out, n_samples: self.n_samples, n_classes: self.n_classes }
    }

    /// Row argmax, ties to the lowest class index.
    pub fn argmax(&self) -> Vec<usize> {
        self.rows().map(argmax).collect()
    }
}

/// Row-stochastic matrix (each row a probability vector).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbMatrix {
    values: Vec<f64>,
    n_samples: usize,
    n_classes: usize,
}

const ROW_SUM_TOL: f64 = 1e-6;

impl ProbMatrix {
    /// Validates that every row is a probability vector (sum 1 within 1e-6).
    pub fn new(values: Vec<f64>, n_samples: usize, n_classes: usize) -> Result<Self> {
        if n_classes < 2 {
            return invalid(format!("need at least 2 classes, got {n_classes}"));
        }
        check_dim("probability values", n_samples * n_classes, values.len())?;
        for (i, row) in values.chunks_exact(n_classes).enumerate() {
            if row.iter().any(|p| !(0.0..=1.0 + ROW_SUM_TOL).contains(p)) {
                return invalid(format!("row {i} has an entry outside [0, 1]"));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return invalid(format!("row {i} sums to {s}, not 1"));
            }
        }
        Ok(Self { values, n_samples, n_classes })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_classes = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_classes) {
            return invalid("ragged probability rows");
        }
        Self::new(rows.concat(), rows.len(), n_classes)
    }

    pub(crate) fn from_raw(values: Vec<f64>, n_samples: usize, n_classes: usize) -> Self {
        debug_assert_eq!(values.len(), n_samples * n_classes);
        Self { values, n_samples, n_classes }
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_classes..(i + 1) * self.n_classes]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_classes)
    }

    pub fn get(&self, i: usize, c: usize) -> f64 {
        self.values[i * self.n_classes + c]
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut values = Vec::with_capacity(idx.len() * self.n_classes);
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        Self::from_raw(values, idx.len(), self.n_classes)
    }

    pub fn argmax(&self) -> Vec<usize> {
        self.rows().map(argmax).collect()
    }

    pub fn max_probs(&self) -> Vec<f64> {
        self.rows().map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect()
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_into(row: &[f64], out: &mut Vec<f64>) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let start = out.len();
    let mut sum = 0.0;
    for &v in row {
        let e = (v - m).exp();
        sum += e;
        out.push(e);
    }
    for p in &mut out[start..] {
        *p /= sum;
    }
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(row.len());
    softmax_into(row, &mut out);
    out
}

/// Logits paired with ground-truth class indices.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledBatch {
    pub logits: LogitMatrix,
    pub labels: Vec<usize>,
}

impl LabeledBatch {
    pub fn new(logits: LogitMatrix, labels: Vec<usize>) -> Result<Self> {
        check_dim("labels", logits.n_samples(), labels.len())?;
        let c = logits.n_classes();
        if let Some(i) = labels.iter().position(|&y| y >= c) {
            return invalid(format!("label {} at row {i} out of range for {c} classes", labels[i]));
        }
        Ok(Self { logits, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.logits.n_classes()
    }

    /// Number of samples carrying each true label.
    pub fn class_counts(&self) -> Vec<usize> {
        class_counts(&self.labels, self.n_classes())
    }
}

pub fn class_counts(labels: &[usize], n_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; n_classes];
    for &y in labels {
        counts[y] += 1;
    }
    counts
}
