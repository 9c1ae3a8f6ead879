//! Command implementations behind the `seval` binary.

pub mod commands;
pub mod config;
pub mod dump;
pub mod error;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "seval", version, about = "Learned pseudo-label offsets and thresholds for imbalanced SSL")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit offsets and thresholds on a labeled prediction dump.
    Estimate(EstimateArgs),
    /// Run one simulation and write metrics.csv, summary.json and curriculum.json.
    Train(TrainArgs),
    /// Score pseudo-labels from a dump against oracle labels.
    Eval(EvalArgs),
    /// Run a (gamma, method, seed) grid and summarize balanced accuracy.
    Sweep(SweepArgs),
    /// Write the synthetic dataset of a config as CSV files.
    Generate(GenerateArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum WeightsArg {
    Uniform,
    InverseFrequency,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Prediction dump with a label on every row.
    pub dump: PathBuf,
    #[arg(long, default_value_t = 0.75)]
    pub target_t: f64,
    #[arg(long, default_value_t = 1)]
    pub group_size: usize,
    #[arg(long, default_value_t = 10)]
    pub e1: usize,
    #[arg(long, default_value_t = 10)]
    pub e2: usize,
    #[arg(long, value_enum, default_value_t = WeightsArg::InverseFrequency)]
    pub weights: WeightsArg,
    /// Skip the small-class fallbacks that floor offsets.
    #[arg(long)]
    pub no_pi_floor: bool,
    /// Weight every holdout class equally when fitting offsets.
    #[arg(long)]
    pub balanced_offsets: bool,
    /// Output file (default: estimate.json under the output root).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub output_root: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    pub config: PathBuf,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    pub dry_run: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub total_iters: Option<usize>,
    #[arg(long)]
    pub output_root: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dump of raw pseudo-label logits.
    pub pseudo_dump: PathBuf,
    /// CSV starting with sample_id,label holding the true labels.
    pub oracle_dump: PathBuf,
    /// JSON with "tau" and optionally "pi" (e.g. the output of `estimate`).
    pub tau_json: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    pub config: PathBuf,
    /// Imbalance ratios, applied to both labeled and unlabeled data.
    #[arg(long, value_delimiter = ',', required = true)]
    pub gamma_list: Vec<f64>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub seeds: Vec<u64>,
    /// Methods to compare (default: the one in the config).
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<String>,
    #[arg(long)]
    pub total_iters: Option<usize>,
    #[arg(long)]
    pub output_root: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for labeled.csv, unlabeled.csv, unlabeled_oracle.csv and test.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Estimate(a) => commands::estimate(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Generate(a) => commands::generate_cmd(&a),
    }
}
