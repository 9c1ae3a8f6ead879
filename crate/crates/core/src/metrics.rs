//! Pseudo-label diagnostics: accuracy gain, correctness (quantity x quality),
//! class-wise precision/recall, the four-case taxonomy, and estimated precision.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Result};
use crate::logits::{argmax, class_counts, ProbMatrix};
use crate::pl_engine::{select_mask, PseudoBatch};
use crate::thresholds::ThresholdVector;

/// True labels of the unlabeled pool, visible to evaluation only.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleUnlabeled {
    pub true_labels: Vec<usize>,
    pub class_counts_m: Vec<usize>,
}

impl OracleUnlabeled {
    pub fn new(true_labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if let Some(i) = true_labels.iter().position(|&y| y >= n_classes) {
            return invalid(format!("oracle label {} at row {i} out of range", true_labels[i]));
        }
        let class_counts_m = class_counts(&true_labels, n_classes);
        Ok(Self { true_labels, class_counts_m })
    }

    pub fn len(&self) -> usize {
        self.true_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.true_labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_counts_m.len()
    }
}

/// Sample-wise plus class-wise accuracy gain of `new_labels` over `old_labels`.
/// Classes absent from the oracle are skipped in the class-wise term.
pub fn gain(old_labels: &[usize], new_labels: &[usize], oracle: &OracleUnlabeled) -> Result<f64> {
    let m = oracle.len();
    check_dim("old labels", m, old_labels.len())?;
    check_dim("new labels", m, new_labels.len())?;
    if m == 0 {
        return Ok(0.0);
    }
    let n_classes = oracle.n_classes();
    let mut sample_wise = 0.0;
    let mut per_class = vec![0.0; n_classes];
    for ((&o, &n), &y) in old_labels.iter().zip(new_labels).zip(&oracle.true_labels) {
        let hit_new = f64::from(u8::from(n == y));
        let hit_old = f64::from(u8::from(o == y));
        sample_wise += hit_new - hit_old;
        // a correct label is counted in the class of the truth
        per_class[y] += hit_new - hit_old;
    }
    let class_wise: f64 = per_class
        .iter()
        .zip(&oracle.class_counts_m)
        .filter(|(_, &mc)| mc > 0)
        .map(|(d, &mc)| d / (mc as f64 * n_classes as f64))
        .sum();
    Ok(sample_wise / m as f64 + class_wise)
}

/// Running mean of a per-evaluation gain series.
pub fn cumulative_gain(series: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    series
        .iter()
        .enumerate()
        .map(|(i, g)| {
            acc += g;
            acc / (i + 1) as f64
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correctness {
    pub quantity: f64,
    pub quality: f64,
    pub correctness: f64,
}

/// Class-balanced quantity and quality of the selected pseudo-labels,
/// weighting each sample by `1 / m` of its true class.
pub fn correctness(pseudo: &PseudoBatch, oracle: &OracleUnlabeled, tau: &ThresholdVector) -> Result<Correctness> {
    check_dim("pseudo-labels", oracle.len(), pseudo.len())?;
    let selected = select_mask(&pseudo.q, &pseudo.pred_labels, tau)?;
    let mut correct = 0.0;
    let mut total = 0.0;
    let mut chosen = 0.0;
    for ((&yhat, &y), &sel) in pseudo.hard_labels.iter().zip(&oracle.true_labels).zip(&selected) {
        let w = 1.0 / oracle.class_counts_m[y] as f64;
        total += w;
        if sel {
            chosen += w;
            if yhat == y {
                correct += w;
            }
        }
    }
    if chosen == 0.0 {
        return Ok(Correctness { quantity: 0.0, quality: 0.0, correctness: 0.0 });
    }
    let quantity = correct / total;
    let quality = correct / chosen;
    Ok(Correctness { quantity, quality, correctness: quantity * quality })
}

/// Precision and recall of one class; `None` where the ratio is 0/0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassPR {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

pub fn confusion_matrix(pred_labels: &[usize], true_labels: &[usize], n_classes: usize) -> Result<Vec<Vec<usize>>> {
    check_dim("predicted labels", true_labels.len(), pred_labels.len())?;
    let mut cm = vec![vec![0usize; n_classes]; n_classes];
    for (&p, &y) in pred_labels.iter().zip(true_labels) {
        if p >= n_classes || y >= n_classes {
            return invalid(format!("label pair ({p}, {y}) out of range for {n_classes} classes"));
        }
        cm[y][p] += 1;
    }
    Ok(cm)
}

pub fn classwise_pr(pred_labels: &[usize], true_labels: &[usize], n_classes: usize) -> Result<Vec<ClassPR>> {
    check_dim("predicted labels", true_labels.len(), pred_labels.len())?;
    let mut tp = vec![0usize; n_classes];
    let mut predicted = vec![0usize; n_classes];
    let mut actual = vec![0usize; n_classes];
    for (&p, &y) in pred_labels.iter().zip(true_labels) {
        if p >= n_classes || y >= n_classes {
            return invalid(format!("label pair ({p}, {y}) out of range for {n_classes} classes"));
        }
        predicted[p] += 1;
        actual[y] += 1;
        if p == y {
            tp[p] += 1;
        }
    }
    let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    Ok((0..n_classes)
        .map(|c| ClassPR { precision: ratio(tp[c], predicted[c]), recall: ratio(tp[c], actual[c]) })
        .collect())
}

pub fn accuracy(pred_labels: &[usize], true_labels: &[usize]) -> f64 {
    if true_labels.is_empty() {
        return 0.0;
    }
    let hits = pred_labels.iter().zip(true_labels).filter(|(p, y)| p == y).count();
    hits as f64 / true_labels.len() as f64
}

/// Mean recall over classes that have at least one true sample.
pub fn balanced_accuracy(pred_labels: &[usize], true_labels: &[usize], n_classes: usize) -> Result<f64> {
    let pr = classwise_pr(pred_labels, true_labels, n_classes)?;
    let recalls: Vec<f64> = pr.iter().filter_map(|c| c.recall).collect();
    if recalls.is_empty() {
        return Ok(0.0);
    }
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CaseTag {
    /// High recall, low precision.
    Case1,
    /// Low recall, high precision.
    Case2,
    /// High recall, high precision.
    Case3,
    /// Low recall, low precision.
    Case4,
}

/// Tags every class by whether its recall and precision strictly exceed the
/// unweighted mean over classes where each is defined. Undefined counts as low.
pub fn case_taxonomy(pr: &[ClassPR]) -> Result<Vec<CaseTag>> {
    let mean = |vals: Vec<f64>| (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
    let Some(mean_p) = mean(pr.iter().filter_map(|c| c.precision).collect()) else {
        return invalid("case taxonomy needs at least one class with defined precision");
    };
    let mean_r = mean(pr.iter().filter_map(|c| c.recall).collect()).unwrap_or(f64::INFINITY);
    Ok(pr
        .iter()
        .map(|c| {
            let hi_r = c.recall.is_some_and(|r| r > mean_r);
            let hi_p = c.precision.is_some_and(|p| p > mean_p);
            match (hi_r, hi_p) {
                (true, false) => CaseTag::Case1,
                (false, true) => CaseTag::Case2,
                (true, true) => CaseTag::Case3,
                (false, false) => CaseTag::Case4,
            }
        })
        .collect())
}

/// `Q'_c = sum_i 1[argmax_i = c] max_j p_ij / sum_i p_ic`; `None` for 0/0.
pub fn estimated_precision(train_probs: &ProbMatrix) -> Vec<Option<f64>> {
    let c = train_probs.n_classes();
    let mut num = vec![0.0; c];
    let mut den = vec![0.0; c];
    for row in train_probs.rows() {
        let top = argmax(row);
        num[top] += row[top];
        for (d, p) in den.iter_mut().zip(row) {
            *d += p;
        }
    }
    num.into_iter()
        .zip(den)
        .map(|(n, d)| (d > 0.0).then(|| n / d))
        .collect()
}

/// One evaluation row of the metrics CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iter: usize,
    pub gain: f64,
    pub cum_gain: f64,
    pub quantity: f64,
    pub quality: f64,
    pub correctness: f64,
    pub balanced_accuracy: f64,
    pub accuracy: f64,
    pub class_pr: Vec<ClassPR>,
}

pub fn metrics_header(n_classes: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "iter",
        "gain",
        "cum_gain",
        "quantity",
        "quality",
        "correctness",
        "balanced_accuracy",
        "accuracy",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for c in 0..n_classes {
        h.push(format!("precision_{c}"));
        h.push(format!("recall_{c}"));
    }
    h
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRow {
    pub fn fields(&self) -> Vec<String> {
        let mut f = vec![
            self.iter.to_string(),
            self.gain.to_string(),
            self.cum_gain.to_string(),
            self.quantity.to_string(),
            self.quality.to_string(),
            self.correctness.to_string(),
            self.balanced_accuracy.to_string(),
            self.accuracy.to_string(),
        ];
        for c in &self.class_pr {
            f.push(opt(c.precision));
            f.push(opt(c.recall));
        }
        f
    }
}

/// Writes the header and every row as comma-separated UTF-8.
pub fn write_metrics_csv<W: Write>(out: W, n_classes: usize, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(metrics_header(n_classes))?;
    for r in rows {
        check_dim("per-class metric columns", n_classes, r.class_pr.len())?;
        w.write_record(r.fields())?;
    }
    w.flush()?;
    Ok(())
}
