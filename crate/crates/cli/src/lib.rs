//! Front end for the fragmentation simulator: single runs, parameter
//! sweeps, the throughput oracle and the consistency checker.

pub mod args;
pub mod commands;
pub mod report;
pub mod settings;

use std::ffi::OsString;

use clap::Parser;
use thiserror::Error;

use args::{Cli, Command};

#[derive(Debug, Error, PartialEq)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Model(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    /// 1 model or assertion failure, 2 usage error, 3 I/O error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Model(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Run(a) => commands::cmd_run(a),
        Command::Sweep(a) => commands::cmd_sweep(a),
        Command::Oracle(a) => commands::cmd_oracle(a),
        Command::Check(a) => commands::cmd_check(a),
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
