//! Subcommand implementations. Each writes its report to `out` and returns
//! a [`CliError`] carrying the exit code on failure.

mod eval;
mod gradcheck;
mod infer;
mod params;
mod train;

use std::io::{self, Write};

use fgmamba_core::Error;

use crate::cli::{Cli, Command};
use crate::error::CliError;

pub use eval::{evaluate_dirs, EvalRow};

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Train(args) => train::run(&args, out),
        Command::Infer(args) => infer::run(&args, out),
        Command::Eval(args) => eval::run(&args, out),
        Command::Gradcheck(args) => gradcheck::run(&args, out),
        Command::Params(args) => params::run(&args, out),
    }
}

fn io_error(e: io::Error) -> CliError {
    CliError::Other(format!("write failed: {e}"))
}

/// Default classification of library errors.
fn core_error(e: Error) -> CliError {
    match e {
        Error::Diverged { step, loss } => CliError::Diverged(format!("loss became {loss} at step {step}")),
        Error::EmptyDataset | Error::InvalidInput(_) => CliError::Data(e.to_string()),
        Error::InvalidConfig(_) => CliError::Usage(e.to_string()),
        other => CliError::Other(other.to_string()),
    }
}

/// Four decimals, with infinities spelled out.
fn fixed4(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}
