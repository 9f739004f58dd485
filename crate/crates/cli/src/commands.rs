//! Subcommand implementations.

use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::Path;

use fragsim::engine::derive_seed;
use fragsim::oracle::{expected_r, Policy};
use fragsim::{run, run_with_trace, Algorithm, Engine, EngineError, RunConfig, SummaryStats};
use rayon::prelude::*;

use crate::args::{CheckArgs, OracleArgs, RunArgs, SweepArgs};
use crate::report::{self, SweepRow};
use crate::settings::{RunSettings, SweepSettings};
use crate::CliError;

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Config(m) => CliError::Usage(m),
            EngineError::Io(e) => CliError::Io(e.to_string()),
            e @ EngineError::CorruptState { .. } => CliError::Model(e.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

pub fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let s = RunSettings::resolve(args)?;
    let mut config = RunConfig::new(s.alpha, s.alg, s.experiment.seed)
        .events(s.experiment.events, s.experiment.warmup);
    config.validate()?;
    let summary = match &s.trace {
        Some(path) => {
            config.record_trace = true;
            let file = fs::File::create(path).map_err(io_err(path))?;
            let mut w = BufWriter::new(file);
            let summary = run_with_trace(&config, Some(&mut w))?;
            std::io::Write::flush(&mut w).map_err(io_err(path))?;
            summary
        }
        None => run(&config)?,
    };
    report::emit(s.out.as_deref(), &report::summary_bytes(&summary, s.experiment.format)?)
}

/// One (alpha, algorithm, replication) unit of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub alpha_index: usize,
    pub alg: Algorithm,
    pub rep: u32,
    pub config: RunConfig,
}

impl Cell {
    pub fn file_name(&self, ext: &str) -> String {
        format!("a{}_{}_r{}.{ext}", self.config.alpha, self.alg, self.rep)
    }
}

/// Cells in row-major order (alpha, then algorithm, then replication).
/// The algorithm index in the seed is its position in `ls, cs, lfs`.
pub fn sweep_cells(s: &SweepSettings) -> Vec<Cell> {
    let mut cells = Vec::new();
    for (ai, &alpha) in s.alphas.iter().enumerate() {
        for &alg in &s.algs {
            let gi = Algorithm::ALL.iter().position(|&a| a == alg).expect("known algorithm");
            for rep in 0..s.replications {
                let seed = derive_seed(s.experiment.seed, ai as u64, gi as u64, u64::from(rep));
                let config = RunConfig::new(alpha, alg, seed)
                    .events(s.experiment.events, s.experiment.warmup);
                cells.push(Cell {
                    alpha_index: ai,
                    alg,
                    rep,
                    config,
                });
            }
        }
    }
    cells
}

/// Runs every cell on a pool of `workers` threads; results are returned in
/// cell order whatever the scheduling.
pub fn run_cells(cells: &[Cell], workers: usize) -> Result<Vec<Result<SummaryStats, EngineError>>, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Io(e.to_string()))?;
    Ok(pool.install(|| cells.par_iter().map(|c| run(&c.config)).collect()))
}

pub fn aggregate(cells: &[Cell], summaries: &[SummaryStats]) -> Vec<SweepRow> {
    let mut rows: Vec<SweepRow> = Vec::new();
    let mut group: Vec<SweepRow> = Vec::new();
    let mut key = None;
    for (cell, s) in cells.iter().zip(summaries) {
        let k = (cell.alpha_index, cell.alg);
        if key.is_some_and(|prev| prev != k) {
            rows.push(SweepRow::mean(&group));
            group.clear();
        }
        key = Some(k);
        group.push(SweepRow::from_summary(s));
    }
    if !group.is_empty() {
        rows.push(SweepRow::mean(&group));
    }
    rows
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<(), CliError> {
    let s = SweepSettings::resolve(args)?;
    for &alpha in &s.alphas {
        RunConfig::new(alpha, Algorithm::Ls, 0)
            .events(s.experiment.events, s.experiment.warmup)
            .validate()?;
    }
    fs::create_dir_all(&s.out).map_err(io_err(&s.out))?;
    let cells = sweep_cells(&s);
    let results = run_cells(&cells, s.workers)?;

    let mut failures = Vec::new();
    let mut done = Vec::new();
    let mut done_cells = Vec::new();
    for (cell, result) in cells.iter().zip(results) {
        match result {
            Ok(summary) => {
                let path = s.out.join(cell.file_name(s.experiment.format.extension()));
                let bytes = report::summary_bytes(&summary, s.experiment.format)?;
                fs::write(&path, bytes).map_err(io_err(&path))?;
                done.push(summary);
                done_cells.push(cell.clone());
            }
            Err(e) => failures.push(format!("{}: {e}", cell.file_name("json"))),
        }
    }
    let path = s.out.join("sweep.csv");
    fs::write(&path, report::rows_to_csv(&aggregate(&done_cells, &done))?).map_err(io_err(&path))?;
    if failures.is_empty() {
        Ok(())
    } else {
        for f in &failures {
            eprintln!("cell failed: {f}");
        }
        Err(CliError::Model(format!("{} of {} cells failed", failures.len(), cells.len())))
    }
}

pub const TABLE_ALPHAS: [f64; 20] = [
    0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85,
    0.9, 0.95, 1.0,
];

fn oracle_policy(args: &OracleArgs) -> Policy {
    let mut p = Policy {
        force_monte_carlo: args.monte_carlo,
        ..Policy::default()
    };
    if let Some(n) = args.samples {
        p.mc_samples = n;
    }
    if let Some(seed) = args.seed {
        p.seed = seed;
    }
    p
}

pub fn cmd_oracle(args: &OracleArgs) -> Result<(), CliError> {
    if !(args.tol > 0.0) || args.samples == Some(0) {
        return Err(CliError::Usage("tol and samples must be positive".into()));
    }
    let policy = oracle_policy(args);
    let oracle = |alpha: f64| {
        expected_r(alpha, args.tol, &policy).map_err(|e| match e {
            fragsim::oracle::OracleError::InvalidArgument(m) => CliError::Usage(m),
            e => CliError::Model(e.to_string()),
        })
    };
    let alphas = if args.alpha.is_empty() {
        TABLE_ALPHAS.to_vec()
    } else {
        args.alpha.clone()
    };
    let mut out = String::new();
    for &alpha in &alphas {
        let r = oracle(alpha)?;
        writeln!(out, "{}", r.line()).expect("write to String");
    }
    report::emit(args.out.as_deref(), out.as_bytes())?;

    let Some(path) = &args.compare else {
        return Ok(());
    };
    let mut worst: Option<(f64, String)> = None;
    let mut text = String::from("alpha alg mean_r expected_r rel_diff\n");
    for row in report::read_sweep_csv(path)? {
        let r = oracle(row.alpha)?;
        let rel = (row.mean_r - r.expected_r).abs() / r.expected_r;
        writeln!(text, "{} {} {} {} {}", row.alpha, row.alg, row.mean_r, r.expected_r, rel)
            .expect("write to String");
        if rel > args.compare_tol && worst.as_ref().is_none_or(|(w, _)| rel > *w) {
            worst = Some((rel, format!("alpha {} {}", row.alpha, row.alg)));
        }
    }
    eprint!("{text}");
    match worst {
        None => Ok(()),
        Some((rel, cell)) => Err(CliError::Model(format!(
            "{cell}: simulated mean R differs from E(R) by {:.3}% (limit {:.3}%)",
            100.0 * rel,
            100.0 * args.compare_tol
        ))),
    }
}

pub fn cmd_check(args: &CheckArgs) -> Result<(), CliError> {
    if args.events == 0 {
        return Err(CliError::Usage("--events must be positive".into()));
    }
    let mut report = String::new();
    for &alpha in &args.alpha {
        for &alg in &args.alg {
            let mut config = RunConfig::new(alpha, alg, args.seed).events(args.events, 0);
            config.validate_every = args.validate_every;
            config.validate()?;
            let mut engine = Engine::initial_fill(&config)?;
            for k in 1..=args.events {
                if args.inject_fault == Some(k) {
                    engine.spectrum_mut_for_test().corrupt_census_for_test();
                }
                engine.step().map_err(|e| {
                    CliError::Model(format!("{alg} alpha={alpha}: {e}"))
                })?;
            }
            engine
                .spectrum()
                .validate()
                .map_err(|e| CliError::Model(format!("{alg} alpha={alpha}: {e}")))?;
            writeln!(report, "ok {alg} alpha={alpha} events={}", args.events).expect("write to String");
        }
    }
    print!("{report}");
    Ok(())
}
