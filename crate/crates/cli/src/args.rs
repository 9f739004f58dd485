//! Command-line grammar.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fragsim::Algorithm;

#[derive(Debug, Parser)]
#[command(name = "fragsim", version, about = "At-capacity spectrum fragmentation simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment and write its summary statistics.
    Run(RunArgs),
    /// Run an alpha x algorithm grid and write per-cell summaries plus sweep.csv.
    Sweep(SweepArgs),
    /// Print the analytic maximum throughput E(R).
    Oracle(OracleArgs),
    /// Short randomized runs with every consistency check enabled.
    Check(CheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

/// Flags shared by `run` and `sweep`. Every field is optional so that a
/// config file can fill what the command line leaves out.
#[derive(Debug, Clone, Default, Args)]
pub struct ExperimentArgs {
    /// Events after the initial fill (including warm-up).
    #[arg(long)]
    pub events: Option<u64>,
    /// Events discarded before statistics are collected.
    #[arg(long)]
    pub warmup: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// TOML file with defaults for any of these flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub alg: Option<Algorithm>,
    #[command(flatten)]
    pub common: ExperimentArgs,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write one line per departure event to this file.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// Comma-separated list of alpha values.
    #[arg(long, value_delimiter = ',')]
    pub alpha: Vec<f64>,
    /// Comma-separated subset of ls,cs,lfs.
    #[arg(long, value_delimiter = ',')]
    pub alg: Vec<Algorithm>,
    #[arg(long)]
    pub replications: Option<u32>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[command(flatten)]
    pub common: ExperimentArgs,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    /// Comma-separated list of alpha values (default 0.05, 0.10, ..., 1.00).
    #[arg(long, value_delimiter = ',')]
    pub alpha: Vec<f64>,
    #[arg(long, default_value_t = fragsim::oracle::DEFAULT_TOL)]
    pub tol: f64,
    /// Evaluate by Monte Carlo regardless of alpha.
    #[arg(long)]
    pub monte_carlo: bool,
    #[arg(long)]
    pub samples: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// A sweep.csv whose mean_r column is compared with the oracle.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    /// Largest accepted relative difference for --compare.
    #[arg(long, default_value_t = 0.01)]
    pub compare_tol: f64,
}

#[derive(Debug, Clone, Args)]
pub struct CheckArgs {
    #[arg(long, default_value_t = 100_000)]
    pub events: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_values_t = [0.05, 0.3, 0.8, 0.99])]
    pub alpha: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = Algorithm::ALL)]
    pub alg: Vec<Algorithm>,
    /// Full from-scratch validation interval.
    #[arg(long, default_value_t = 10_000)]
    pub validate_every: u64,
    /// Corrupts the fragment census before this event of every run.
    #[arg(long, hide = true)]
    pub inject_fault: Option<u64>,
}
