//! Config-file defaults and their merge with command-line flags.
//!
//! Precedence is flag, then config file, then built-in default.

use std::path::{Path, PathBuf};

use fragsim::Algorithm;
use serde::Deserialize;

use crate::args::{ExperimentArgs, Format, RunArgs, SweepArgs};
use crate::CliError;

pub const DEFAULT_EVENTS: u64 = 2_000_000;
pub const DEFAULT_WARMUP: u64 = 1_000_000;
pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_ALPHAS: [f64; 3] = [0.05, 0.1, 0.2];

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(x) => vec![x.clone()],
            OneOrMany::Many(xs) => xs.clone(),
        }
    }
}

/// Keys accepted in a `--config` TOML file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub alpha: Option<OneOrMany<f64>>,
    pub alg: Option<OneOrMany<Algorithm>>,
    pub events: Option<u64>,
    pub warmup: Option<u64>,
    pub seed: Option<u64>,
    pub format: Option<Format>,
    pub workers: Option<usize>,
    pub replications: Option<u32>,
    pub out: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    fn load_opt(path: Option<&PathBuf>) -> Result<Self, CliError> {
        path.map_or(Ok(FileConfig::default()), |p| FileConfig::load(p))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub events: u64,
    pub warmup: u64,
    pub seed: u64,
    pub format: Format,
}

fn experiment(flags: &ExperimentArgs, file: &FileConfig) -> Experiment {
    Experiment {
        events: flags.events.or(file.events).unwrap_or(DEFAULT_EVENTS),
        warmup: flags.warmup.or(file.warmup).unwrap_or(DEFAULT_WARMUP),
        seed: flags.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
        format: flags.format.or(file.format).unwrap_or(Format::Json),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub alpha: f64,
    pub alg: Algorithm,
    pub experiment: Experiment,
    pub out: Option<PathBuf>,
    pub trace: Option<PathBuf>,
}

impl RunSettings {
    pub fn resolve(args: &RunArgs) -> Result<Self, CliError> {
        let file = FileConfig::load_opt(args.common.config.as_ref())?;
        let single = |what: &str, n: usize| {
            CliError::Usage(format!("config file lists {n} values for {what}; run takes one"))
        };
        let alpha = match (args.alpha, &file.alpha) {
            (Some(a), _) => a,
            (None, Some(list)) => match list.to_vec().as_slice() {
                [a] => *a,
                other => return Err(single("alpha", other.len())),
            },
            (None, None) => return Err(CliError::Usage("--alpha is required".into())),
        };
        let alg = match (args.alg, &file.alg) {
            (Some(a), _) => a,
            (None, Some(list)) => match list.to_vec().as_slice() {
                [a] => *a,
                other => return Err(single("alg", other.len())),
            },
            (None, None) => Algorithm::Ls,
        };
        Ok(RunSettings {
            alpha,
            alg,
            experiment: experiment(&args.common, &file),
            out: args.out.clone().or(file.out),
            trace: args.trace.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    pub alphas: Vec<f64>,
    pub algs: Vec<Algorithm>,
    pub replications: u32,
    pub workers: usize,
    pub experiment: Experiment,
    pub out: PathBuf,
}

impl SweepSettings {
    pub fn resolve(args: &SweepArgs) -> Result<Self, CliError> {
        let file = FileConfig::load_opt(args.common.config.as_ref())?;
        let alphas = if !args.alpha.is_empty() {
            args.alpha.clone()
        } else {
            file.alpha.as_ref().map_or(DEFAULT_ALPHAS.to_vec(), OneOrMany::to_vec)
        };
        let algs = if !args.alg.is_empty() {
            args.alg.clone()
        } else {
            file.alg.as_ref().map_or(Algorithm::ALL.to_vec(), OneOrMany::to_vec)
        };
        let replications = args.replications.or(file.replications).unwrap_or(1);
        let workers = args
            .workers
            .or(file.workers)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        if replications == 0 || workers == 0 {
            return Err(CliError::Usage("replications and workers must be positive".into()));
        }
        if alphas.is_empty() || algs.is_empty() {
            return Err(CliError::Usage("empty alpha or algorithm list".into()));
        }
        let out = args
            .out
            .clone()
            .or(file.out.clone())
            .ok_or_else(|| CliError::Usage("--out DIR is required".into()))?;
        Ok(SweepSettings {
            alphas,
            algs,
            replications,
            workers,
            experiment: experiment(&args.common, &file),
            out,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(alpha: Option<f64>, config: Option<PathBuf>) -> RunArgs {
        RunArgs {
            alpha,
            alg: None,
            common: ExperimentArgs {
                config,
                ..ExperimentArgs::default()
            },
            out: None,
            trace: None,
        }
    }

    #[test]
    fn defaults_apply_without_config() {
        let s = RunSettings::resolve(&run_args(Some(0.1), None)).unwrap();
        assert_eq!(s.alg, Algorithm::Ls);
        assert_eq!(s.experiment.events, DEFAULT_EVENTS);
        assert_eq!(s.experiment.format, Format::Json);
    }

    #[test]
    fn flags_beat_file_beats_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "alpha = 0.3\nalg = \"cs\"\nevents = 500\nseed = 9\n").unwrap();
        let mut args = run_args(None, Some(path.clone()));
        let s = RunSettings::resolve(&args).unwrap();
        assert_eq!((s.alpha, s.alg, s.experiment.events, s.experiment.seed), (0.3, Algorithm::Cs, 500, 9));
        assert_eq!(s.experiment.warmup, DEFAULT_WARMUP);
        args.alpha = Some(0.7);
        args.common.seed = Some(4);
        let s = RunSettings::resolve(&args).unwrap();
        assert_eq!((s.alpha, s.experiment.seed, s.experiment.events), (0.7, 4, 500));
    }

    #[test]
    fn config_errors_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "alpah = 0.3\n").unwrap();
        let err = RunSettings::resolve(&run_args(None, Some(path))).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let err = RunSettings::resolve(&run_args(None, Some(dir.path().join("missing.toml"))))
            .unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert_eq!(RunSettings::resolve(&run_args(None, None)).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn sweep_lists_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "alpha = [0.1, 0.2]\nalg = [\"ls\", \"lfs\"]\nworkers = 3\nout = \"x\"\n").unwrap();
        let args = SweepArgs {
            alpha: vec![],
            alg: vec![],
            replications: None,
            workers: None,
            common: ExperimentArgs {
                config: Some(path),
                ..ExperimentArgs::default()
            },
            out: None,
        };
        let s = SweepSettings::resolve(&args).unwrap();
        assert_eq!(s.alphas, vec![0.1, 0.2]);
        assert_eq!(s.algs, vec![Algorithm::Ls, Algorithm::Lfs]);
        assert_eq!(s.workers, 3);
        assert_eq!(s.out, PathBuf::from("x"));
    }
}
