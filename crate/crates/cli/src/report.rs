//! Output tables and files.

use std::fs;
use std::io::Write;
use std::path::Path;

use fragsim::SummaryStats;
use serde::{Deserialize, Serialize};

use crate::args::Format;
use crate::CliError;

/// Column order of `sweep.csv` (and of single-run CSV output).
pub const SWEEP_COLUMNS: [&str; 16] = [
    "alpha",
    "alg",
    "mean_r",
    "mean_g",
    "mean_f",
    "frags_per_channel",
    "g_over_r",
    "type0_frac",
    "type1_frac",
    "type2_frac",
    "mean_gap_size",
    "mean_frag_size",
    "first_gap_lo",
    "beta_hat",
    "theta_hat",
    "ks",
];

/// One row of `sweep.csv`; field order is the column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub alg: String,
    pub mean_r: f64,
    pub mean_g: f64,
    pub mean_f: f64,
    pub frags_per_channel: f64,
    pub g_over_r: f64,
    pub type0_frac: f64,
    pub type1_frac: f64,
    pub type2_frac: f64,
    pub mean_gap_size: f64,
    pub mean_frag_size: f64,
    pub first_gap_lo: f64,
    pub beta_hat: f64,
    pub theta_hat: f64,
    pub ks: f64,
}

impl SweepRow {
    pub fn from_summary(s: &SummaryStats) -> Self {
        let fit = s.normal_fit;
        SweepRow {
            alpha: s.config.alpha,
            alg: s.config.algorithm.to_string(),
            mean_r: s.mean_r,
            mean_g: s.mean_g,
            mean_f: s.mean_f,
            frags_per_channel: s.mean_frags_per_channel,
            g_over_r: s.mean_g_over_r,
            type0_frac: s.type_fractions[0],
            type1_frac: s.type_fractions[1],
            type2_frac: s.type_fractions[2],
            mean_gap_size: s.mean_gap_size,
            mean_frag_size: s.mean_fragment_size,
            first_gap_lo: s.mean_first_gap_lo,
            beta_hat: fit.map_or(f64::NAN, |f| f.beta_hat),
            theta_hat: fit.map_or(f64::NAN, |f| f.theta_hat),
            ks: fit.map_or(f64::NAN, |f| f.ks_distance),
        }
    }

    /// Column-wise mean of replications of one cell.
    pub fn mean(rows: &[SweepRow]) -> Self {
        let n = rows.len() as f64;
        let avg = |f: fn(&SweepRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        SweepRow {
            alpha: rows[0].alpha,
            alg: rows[0].alg.clone(),
            mean_r: avg(|r| r.mean_r),
            mean_g: avg(|r| r.mean_g),
            mean_f: avg(|r| r.mean_f),
            frags_per_channel: avg(|r| r.frags_per_channel),
            g_over_r: avg(|r| r.g_over_r),
            type0_frac: avg(|r| r.type0_frac),
            type1_frac: avg(|r| r.type1_frac),
            type2_frac: avg(|r| r.type2_frac),
            mean_gap_size: avg(|r| r.mean_gap_size),
            mean_frag_size: avg(|r| r.mean_frag_size),
            first_gap_lo: avg(|r| r.first_gap_lo),
            beta_hat: avg(|r| r.beta_hat),
            theta_hat: avg(|r| r.theta_hat),
            ks: avg(|r| r.ks),
        }
    }
}

pub fn rows_to_csv(rows: &[SweepRow]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| CliError::Io(e.to_string()))?;
    }
    if rows.is_empty() {
        w.write_record(SWEEP_COLUMNS).map_err(|e| CliError::Io(e.to_string()))?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>, CliError> {
    let io = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(io)?;
    let header: Vec<String> = r.headers().map_err(io)?.iter().map(String::from).collect();
    if header != SWEEP_COLUMNS {
        return Err(CliError::Usage(format!(
            "{}: unexpected columns {header:?}",
            path.display()
        )));
    }
    r.deserialize().collect::<Result<_, _>>().map_err(io)
}

pub fn summary_bytes(s: &SummaryStats, format: Format) -> Result<Vec<u8>, CliError> {
    match format {
        Format::Json => {
            let mut bytes =
                serde_json::to_vec_pretty(s).map_err(|e| CliError::Io(e.to_string()))?;
            bytes.push(b'\n');
            Ok(bytes)
        }
        Format::Csv => rows_to_csv(&[SweepRow::from_summary(s)]),
    }
}

/// Writes to `path`, or to standard output when `path` is `None`.
pub fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, bytes).map_err(|e| CliError::Io(format!("{}: {e}", p.display()))),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| CliError::Io(e.to_string())),
    }
}
