use std::io::{self, Write};
use std::process;

use clap::Parser;
use fgmamba_cli::cli::Cli;
use fgmamba_cli::commands;

fn main() {
    let cli = Cli::parse();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let result = commands::run(cli, &mut out);
    let _ = out.flush();
    if let Err(e) = result {
        eprintln!("error: {e}");
        process::exit(e.exit_code() as i32);
    }
}
