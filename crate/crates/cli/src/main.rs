//! `kernlat`: command-line front end for the latency predictor.
//!
//! Machine output (JSON or CSV) goes to stdout or `--output`; diagnostics go
//! to stderr. Exit codes: 0 success, 1 usage, 2 invalid data, 3 prediction
//! failure, 4 I/O.

mod args;
mod commands;

use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use kernlat_core::ErrorKind;

use args::Cli;

/// Failure of one invocation.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(kernlat_core::Error),
}

impl From<kernlat_core::Error> for CliError {
    fn from(e: kernlat_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Data => 2,
                ErrorKind::Prediction => 3,
                ErrorKind::Io => 4,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.global.quiet { "error" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "kernlat: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
