//! Seeded long-tailed toy datasets: a Gaussian mixture and imbalanced two moons.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::metrics::OracleUnlabeled;

/// `n_c = round(n1 * gamma^(-(c-1)/(C-1)))`, clamped to at least 1.
pub fn class_counts(n1: usize, gamma: f64, n_classes: usize) -> Result<Vec<usize>> {
    if n_classes < 2 {
        return invalid(format!("class count must be at least 2, got {n_classes}"));
    }
    if n1 == 0 {
        return invalid("head-class count n1 must be at least 1");
    }
    if !(gamma.is_finite() && gamma >= 1.0) {
        return invalid(format!("imbalance ratio must be >= 1, got {gamma}"));
    }
    let denom = (n_classes - 1) as f64;
    Ok((0..n_classes)
        .map(|c| {
            let n = n1 as f64 * gamma.powf(-(c as f64) / denom);
            (n.round() as usize).max(1)
        })
        .collect())
}

/// Counts for a possibly reversed split: `gamma < 1` means the order is flipped
/// (the last class is the largest) with ratio `1 / gamma`.
pub fn split_counts(n1: usize, gamma: f64, n_classes: usize) -> Result<Vec<usize>> {
    if gamma > 0.0 && gamma < 1.0 {
        let mut c = class_counts(n1, 1.0 / gamma, n_classes)?;
        c.reverse();
        Ok(c)
    } else {
        class_counts(n1, gamma, n_classes)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanLayout {
    /// `spacing * e_c`; needs `dim >= C`.
    Simplex,
    /// Evenly spaced on a circle of radius `spacing` in the first two dimensions.
    Circle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    GaussianMixture {
        dim: usize,
        spacing: f64,
        scale: f64,
        #[serde(default = "default_layout")]
        layout: MeanLayout,
        /// Per-class spread is `scale * (1 + jitter * u)`, `u ~ U[-1, 1]`.
        #[serde(default)]
        scale_jitter: f64,
    },
    TwoMoons {
        noise_sd: f64,
    },
}

fn default_layout() -> MeanLayout {
    MeanLayout::Simplex
}

impl Generator {
    pub fn dim(&self) -> usize {
        match self {
            Generator::GaussianMixture { dim, .. } => *dim,
            Generator::TwoMoons { .. } => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_classes: usize,
    /// Labeled head-class count.
    pub n1: usize,
    /// Unlabeled head-class count.
    pub m1: usize,
    pub gamma_l: f64,
    /// Values below 1 give a reversed unlabeled distribution.
    pub gamma_u: f64,
    #[serde(default = "default_test_per_class")]
    pub n_test_per_class: usize,
    pub generator: Generator,
    #[serde(default)]
    pub seed: u64,
}

fn default_test_per_class() -> usize {
    500
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        self.labeled_counts()?;
        self.unlabeled_counts()?;
        if self.n_test_per_class == 0 {
            return invalid("n_test_per_class must be at least 1");
        }
        match &self.generator {
            Generator::GaussianMixture { dim, spacing, scale, layout, scale_jitter } => {
                if !(*spacing > 0.0 && *scale > 0.0) {
                    return invalid("gaussian mixture spacing and scale must be positive");
                }
                if !(0.0..1.0).contains(scale_jitter) {
                    return invalid("scale_jitter must lie in [0, 1)");
                }
                match layout {
                    MeanLayout::Simplex if *dim < self.n_classes => {
                        return invalid(format!("simplex layout needs dim >= {} classes", self.n_classes))
                    }
                    MeanLayout::Circle if *dim < 2 => return invalid("circle layout needs dim >= 2"),
                    _ => {}
                }
            }
            Generator::TwoMoons { noise_sd } => {
                if self.n_classes != 2 {
                    return invalid("two moons has exactly 2 classes");
                }
                if !(*noise_sd >= 0.0) {
                    return invalid("two moons noise_sd must be non-negative");
                }
            }
        }
        Ok(())
    }

    pub fn labeled_counts(&self) -> Result<Vec<usize>> {
        split_counts(self.n1, self.gamma_l, self.n_classes)
    }

    pub fn unlabeled_counts(&self) -> Result<Vec<usize>> {
        if self.m1 == 0 {
            return Ok(vec![0; self.n_classes]);
        }
        split_counts(self.m1, self.gamma_u, self.n_classes)
    }
}

/// Row-major feature matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Features {
    values: Vec<f64>,
    n_samples: usize,
    dim: usize,
}

impl Features {
    pub fn new(values: Vec<f64>, n_samples: usize, dim: usize) -> Result<Self> {
        check_dim("feature values", n_samples * dim, values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("non-finite feature value");
        }
        Ok(Self { values, n_samples, dim })
    }

    pub fn empty(dim: usize) -> Self {
        Self { values: Vec::new(), n_samples: 0, dim }
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim.max(1)).take(self.n_samples)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut values = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        Self { values, n_samples: idx.len(), dim: self.dim }
    }

    fn push(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.dim);
        self.values.extend_from_slice(row);
        self.n_samples += 1;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledFeatures {
    pub x: Features,
    pub y: Vec<usize>,
}

impl LabeledFeatures {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self { x: self.x.select_rows(idx), y: idx.iter().map(|&i| self.y[i]).collect() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub n_classes: usize,
    pub labeled: LabeledFeatures,
    pub unlabeled: Features,
    pub oracle: OracleUnlabeled,
    /// Class-balanced, drawn independently of the training splits.
    pub test: LabeledFeatures,
}

impl SynthDataset {
    pub fn dim(&self) -> usize {
        self.labeled.x.dim()
    }
}

struct Sampler {
    generator: Generator,
    means: Vec<Vec<f64>>,
    scales: Vec<f64>,
}

impl Sampler {
    fn new(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Self {
        let c = spec.n_classes;
        let (means, scales) = match &spec.generator {
            Generator::GaussianMixture { dim, spacing, scale, layout, scale_jitter } => {
                let means = (0..c)
                    .map(|k| {
                        let mut m = vec![0.0; *dim];
                        match layout {
                            MeanLayout::Simplex => m[k] = *spacing,
                            MeanLayout::Circle => {
                                let a = 2.0 * PI * k as f64 / c as f64;
                                m[0] = spacing * a.cos();
                                m[1] = spacing * a.sin();
                            }
                        }
                        m
                    })
                    .collect();
                let scales = (0..c)
                    .map(|_| scale * (1.0 + scale_jitter * rng.random_range(-1.0..=1.0)))
                    .collect();
                (means, scales)
            }
            Generator::TwoMoons { .. } => (Vec::new(), Vec::new()),
        };
        Self { generator: spec.generator.clone(), means, scales }
    }

    fn sample(&self, class: usize, rng: &mut ChaCha8Rng, out: &mut Vec<f64>) {
        out.clear();
        match &self.generator {
            Generator::GaussianMixture { .. } => {
                let s = self.scales[class];
                for &m in &self.means[class] {
                    let e: f64 = rng.sample(StandardNormal);
                    out.push(m + s * e);
                }
            }
            Generator::TwoMoons { noise_sd } => {
                let t = rng.random_range(0.0..PI);
                let (x, y) = if class == 0 { (t.cos(), t.sin()) } else { (1.0 - t.cos(), 0.5 - t.sin()) };
                let ex: f64 = rng.sample(StandardNormal);
                let ey: f64 = rng.sample(StandardNormal);
                out.push(x + noise_sd * ex);
                out.push(y + noise_sd * ey);
            }
        }
    }

    fn draw(&self, counts: &[usize], rng: &mut ChaCha8Rng, dim: usize) -> LabeledFeatures {
        let mut labels: Vec<usize> = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
            .collect();
        labels.shuffle(rng);
        let mut x = Features::empty(dim);
        let mut buf = Vec::with_capacity(dim);
        for &c in &labels {
            self.sample(c, rng, &mut buf);
            x.push(&buf);
        }
        LabeledFeatures { x, y: labels }
    }
}

const STREAM_LAYOUT: u64 = 0;
const STREAM_LABELED: u64 = 1;
const STREAM_UNLABELED: u64 = 2;
const STREAM_TEST: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Draws a dataset. Every split uses its own random stream, so changing the
/// size of one split leaves the others bitwise unchanged.
pub fn generate(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let dim = spec.generator.dim();
    let sampler = Sampler::new(spec, &mut stream(spec.seed, STREAM_LAYOUT));
    let labeled = sampler.draw(&spec.labeled_counts()?, &mut stream(spec.seed, STREAM_LABELED), dim);
    let unl = sampler.draw(&spec.unlabeled_counts()?, &mut stream(spec.seed, STREAM_UNLABELED), dim);
    let test = sampler.draw(
        &vec![spec.n_test_per_class; spec.n_classes],
        &mut stream(spec.seed, STREAM_TEST),
        dim,
    );
    let oracle = OracleUnlabeled::new(unl.y, spec.n_classes)?;
    Ok(SynthDataset { n_classes: spec.n_classes, labeled, unlabeled: unl.x, oracle, test })
}

/// Writes features then a `label` column; `None` labels are written as -1.
pub fn write_features_csv<W: Write>(out: W, x: &Features, labels: Option<&[usize]>) -> Result<()> {
    if let Some(y) = labels {
        check_dim("labels", x.n_samples(), y.len())?;
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..x.dim()).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    for (i, row) in x.rows().enumerate() {
        let mut rec: Vec<String> = row.iter().map(f64::to_string).collect();
        rec.push(labels.map_or("-1".to_string(), |y| y[i].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`write_features_csv`]. Labels of -1 come back as `None`.
pub fn read_features_csv<R: Read>(input: R) -> Result<(Features, Vec<Option<usize>>)> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    if headers.iter().next_back() != Some("label") {
        return invalid("last column must be `label`");
    }
    let dim = headers.len() - 1;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse_err = |what: &str| Error::InvalidArgument(format!("line {}: bad {what}", line + 2));
        for j in 0..dim {
            values.push(rec[j].trim().parse::<f64>().map_err(|_| parse_err("feature"))?);
        }
        let l: i64 = rec[dim].trim().parse().map_err(|_| parse_err("label"))?;
        labels.push(if l < 0 { None } else { Some(l as usize) });
    }
    let n = labels.len();
    Ok((Features::new(values, n, dim)?, labels))
}

/// Writes `labeled.csv`, `unlabeled.csv` (labels hidden), `unlabeled_oracle.csv`
/// and `test.csv` into `dir`.
pub fn export_dataset(ds: &SynthDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let file = |name: &str| std::fs::File::create(dir.join(name));
    write_features_csv(file("labeled.csv")?, &ds.labeled.x, Some(&ds.labeled.y))?;
    write_features_csv(file("unlabeled.csv")?, &ds.unlabeled, None)?;
    let mut w = csv::Writer::from_writer(file("unlabeled_oracle.csv")?);
    w.write_record(["label"])?;
    for y in &ds.oracle.true_labels {
        w.write_record([y.to_string()])?;
    }
    w.flush()?;
    write_features_csv(file("test.csv")?, &ds.test.x, Some(&ds.test.y))?;
    Ok(())
}
