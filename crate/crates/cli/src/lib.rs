//! Command-line front end: checkpoint and image formats plus the subcommands.

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config_file;
pub mod error;
pub mod image;

pub use error::{CliError, ExitCode};
