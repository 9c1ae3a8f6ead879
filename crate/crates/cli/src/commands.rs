use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use seval_core::curriculum::{estimate_step, EstimateConfig};
use seval_core::metrics::{accuracy, balanced_accuracy, correctness, gain, OracleUnlabeled};
use seval_core::offsets::OffsetVector;
use seval_core::pl_engine::{pseudo_label, select_mask, PseudoBatch};
use seval_core::sim::{self, Method};
use seval_core::synthdata::{export_dataset, generate};
use seval_core::thresholds::{ClassWeights, ThresholdVector};
use seval_core::LabeledBatch;

use crate::config::RunConfig;
use crate::dump::{read_dump, read_oracle_labels};
use crate::error::{CliError, CliResult};
use crate::output::{output_root, write_atomic};
use crate::{EstimateArgs, EvalArgs, GenerateArgs, SweepArgs, TrainArgs, WeightsArg};

/// Contents of the file written by `estimate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateOutput {
    pub pi: Vec<f64>,
    pub tau: Vec<f64>,
    pub fallback: Vec<usize>,
    pub pi_floor: Vec<usize>,
}

/// Threshold file read by `eval`; `pi` defaults to no refinement.
#[derive(Clone, Debug, Deserialize)]
struct EvalParams {
    tau: Vec<f64>,
    #[serde(default)]
    pi: Option<Vec<f64>>,
}

pub fn estimate(a: &EstimateArgs) -> CliResult<()> {
    let dump = read_dump(&a.dump)?;
    let labels = dump.require_labels()?;
    let holdout = LabeledBatch::new(dump.logits.clone(), labels)?;
    let mut cfg = EstimateConfig::default();
    cfg.thresholds.target_t = a.target_t;
    cfg.thresholds.group_size = a.group_size;
    cfg.thresholds.e1 = a.e1;
    cfg.thresholds.e2 = a.e2;
    cfg.thresholds.pi_floor_rule = !a.no_pi_floor;
    cfg.offsets.class_balanced = a.balanced_offsets;
    cfg.thresholds.validate()?;
    let weights = match a.weights {
        WeightsArg::Uniform => ClassWeights::uniform(holdout.n_classes()),
        WeightsArg::InverseFrequency => ClassWeights::inverse_frequency(&holdout.class_counts()),
    };
    let est = estimate_step(&holdout, &weights, &cfg)?;
    let out = EstimateOutput {
        pi: est.pi.as_slice().to_vec(),
        tau: est.thresholds.tau.as_slice().to_vec(),
        fallback: est.thresholds.fallback_classes.iter().copied().collect(),
        pi_floor: est.thresholds.pi_floor_classes.iter().copied().collect(),
    };
    let json = serde_json::to_string_pretty(&out)?;
    let path = a.out.clone().unwrap_or_else(|| output_root(a.output_root.as_deref(), None).join("estimate.json"));
    write_atomic(&path, format!("{json}\n").as_bytes())?;
    println!("{json}");
    Ok(())
}

fn load_config(path: &Path, seed: Option<u64>, total_iters: Option<usize>) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    if let Some(t) = total_iters {
        cfg.train.total_iters = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(a: &TrainArgs) -> CliResult<()> {
    let cfg = load_config(&a.config, a.seed, a.total_iters)?;
    let resolved = serde_json::to_string_pretty(&cfg)?;
    if a.dry_run {
        println!("{resolved}");
        return Ok(());
    }
    let root = output_root(a.output_root.as_deref(), cfg.output_root.as_deref());
    let dir = root.join(cfg.run_dir_name());
    let record = sim::train(&cfg.data, &cfg.train)?;

    let mut csv = Vec::new();
    record.write_metrics_csv(&mut csv)?;
    write_atomic(&dir.join("metrics.csv"), &csv)?;
    write_atomic(&dir.join("summary.json"), format!("{}\n", record.summary_json()?).as_bytes())?;
    if let Some(c) = &record.curriculum {
        write_atomic(&dir.join("curriculum.json"), format!("{}\n", c.to_json()?).as_bytes())?;
    }
    write_atomic(&dir.join("config.json"), format!("{resolved}\n").as_bytes())?;
    println!("{}", dir.display());
    Ok(())
}

/// Metrics of one pseudo-label dump against oracle labels.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalRow {
    pub n: usize,
    /// Gain of the refined pseudo-labels over the raw argmax.
    pub gain: f64,
    pub quantity: f64,
    pub quality: f64,
    pub correctness: f64,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
}

pub fn eval(a: &EvalArgs) -> CliResult<()> {
    let dump = read_dump(&a.pseudo_dump)?;
    let oracle = read_oracle_labels(&a.oracle_dump)?;
    let text = std::fs::read_to_string(&a.tau_json)
        .map_err(|e| CliError::bad(format!("{}: {e}", a.tau_json.display())))?;
    let params: EvalParams = serde_json::from_str(&text)?;
    let row = eval_rows(&dump, &oracle, &params)?;

    let mut w = csv::Writer::from_writer(std::io::stdout());
    w.serialize(&row)?;
    w.flush()?;
    Ok(())
}

fn eval_rows(
    dump: &crate::dump::PredictionDump,
    oracle: &[(String, usize)],
    params: &EvalParams,
) -> CliResult<EvalRow> {
    let c = dump.n_classes();
    if oracle.len() != dump.len() {
        return Err(CliError::bad(format!(
            "pseudo dump has {} rows but oracle has {}",
            dump.len(),
            oracle.len()
        )));
    }
    let truth: HashMap<&str, usize> = oracle.iter().map(|(id, y)| (id.as_str(), *y)).collect();
    if truth.len() != oracle.len() {
        return Err(CliError::bad("duplicate sample_id in oracle dump"));
    }
    let mut order: Vec<usize> = (0..dump.len()).collect();
    order.sort_by(|&i, &j| dump.sample_ids[i].cmp(&dump.sample_ids[j]));
    let mut true_labels = Vec::with_capacity(order.len());
    for &i in &order {
        let id = &dump.sample_ids[i];
        let y = *truth.get(id.as_str()).ok_or_else(|| CliError::bad(format!("sample_id {id} missing from oracle")))?;
        if y >= c {
            return Err(CliError::bad(format!("oracle label {y} of {id} out of range for {c} classes")));
        }
        true_labels.push(y);
    }
    let logits = dump.logits.select_rows(&order);

    let tau = ThresholdVector::new(params.tau.clone())?;
    let pi = match &params.pi {
        Some(p) => OffsetVector::new(p.clone())?,
        None => OffsetVector::ones(c),
    };
    if tau.len() != c || pi.len() != c {
        return Err(CliError::bad(format!("tau and pi must have {c} entries")));
    }
    let raw = logits.argmax();
    let (q, hard_labels) = pseudo_label(&logits, &pi)?;
    let mask = select_mask(&q, &hard_labels, &tau)?;
    let pseudo = PseudoBatch { q, pred_labels: hard_labels.clone(), hard_labels, mask };
    let oracle = OracleUnlabeled::new(true_labels.clone(), c)?;
    let corr = correctness(&pseudo, &oracle, &tau)?;
    Ok(EvalRow {
        n: true_labels.len(),
        gain: gain(&raw, &pseudo.hard_labels, &oracle)?,
        quantity: corr.quantity,
        quality: corr.quality,
        correctness: corr.correctness,
        accuracy: accuracy(&pseudo.hard_labels, &true_labels),
        balanced_accuracy: balanced_accuracy(&pseudo.hard_labels, &true_labels, c)?,
    })
}

/// Baseline settings used when a method is named on the command line.
pub fn method_by_name(name: &str, configured: &Method) -> CliResult<Method> {
    if name == configured.name() {
        return Ok(configured.clone());
    }
    Ok(match name {
        "seval" => Method::Seval,
        "fixed_threshold" | "fixed" => Method::FixedThreshold { tau: 0.95 },
        "la" => Method::La { lambda: 1.0, tau: 0.95 },
        "da" => Method::Da { tau: 0.95 },
        "flex_like" => Method::FlexLike { tau_base: 0.95 },
        other => return Err(CliError::bad(format!("unknown method {other:?}"))),
    })
}

/// Mean and population standard deviation of one (gamma, method) cell.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub method: String,
    pub n_seeds: usize,
    pub balanced_accuracy_mean: f64,
    pub balanced_accuracy_sd: f64,
    pub accuracy_mean: f64,
    pub accuracy_sd: f64,
    pub balanced_accuracy_pl_mean: f64,
    pub balanced_accuracy_pl_sd: f64,
}

pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn sweep(a: &SweepArgs) -> CliResult<()> {
    let base = load_config(&a.config, None, a.total_iters)?;
    if a.seeds.is_empty() || a.gamma_list.is_empty() {
        return Err(CliError::bad("sweep needs at least one gamma and one seed"));
    }
    let names: Vec<String> =
        if a.methods.is_empty() { vec![base.train.method.name().to_string()] } else { a.methods.clone() };
    let mut cells = Vec::new();
    for &gamma in &a.gamma_list {
        for name in &names {
            let mut cfg = base.clone();
            cfg.data.gamma_l = gamma;
            cfg.data.gamma_u = gamma;
            cfg.train.method = method_by_name(name, &base.train.method)?;
            cfg.validate()?;
            cells.push((gamma, cfg));
        }
    }
    let jobs: Vec<(usize, u64)> = (0..cells.len()).flat_map(|i| a.seeds.iter().map(move |&s| (i, s))).collect();
    let results: Vec<CliResult<(f64, f64, f64)>> = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let mut cfg = cells[i].1.clone();
            cfg.set_seed(seed);
            let r = sim::train(&cfg.data, &cfg.train)?;
            Ok((r.test.balanced_accuracy_post_hoc, r.test.accuracy_post_hoc, r.test.balanced_accuracy))
        })
        .collect();
    let results = results.into_iter().collect::<CliResult<Vec<_>>>()?;

    let per_cell = a.seeds.len();
    let mut rows = Vec::with_capacity(cells.len());
    for (i, (gamma, cfg)) in cells.iter().enumerate() {
        let chunk = &results[i * per_cell..(i + 1) * per_cell];
        let col = |f: fn(&(f64, f64, f64)) -> f64| mean_sd(&chunk.iter().map(f).collect::<Vec<_>>());
        let (bm, bs) = col(|r| r.0);
        let (am, asd) = col(|r| r.1);
        let (pm, ps) = col(|r| r.2);
        rows.push(SweepRow {
            gamma: *gamma,
            method: cfg.train.method.name().to_string(),
            n_seeds: per_cell,
            balanced_accuracy_mean: bm,
            balanced_accuracy_sd: bs,
            accuracy_mean: am,
            accuracy_sd: asd,
            balanced_accuracy_pl_mean: pm,
            balanced_accuracy_pl_sd: ps,
        });
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::bad(e.to_string()))?;
    let root = output_root(a.output_root.as_deref(), base.output_root.as_deref());
    let path: PathBuf = root.join(format!("sweep-{}.csv", base.config_hash()));
    write_atomic(&path, &bytes)?;
    print!("{}", String::from_utf8_lossy(&bytes));
    Ok(())
}

pub fn generate_cmd(a: &GenerateArgs) -> CliResult<()> {
    let cfg = load_config(&a.config, a.seed, None)?;
    let ds = generate(&cfg.data)?;
    export_dataset(&ds, &a.out_dir)?;
    Ok(())
}
