use std::io::Write;

use fgmamba_core::model::{param_breakdown, Preset};

use super::io_error;
use crate::cli::ParamsArgs;
use crate::error::CliError;

pub(super) fn run(args: &ParamsArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let file = args.model.config_file()?;
    let cfg = args.model.resolve(Preset::Paper, &file)?;
    let rows = param_breakdown(&cfg);
    let total: usize = rows.iter().map(|(_, n)| n).sum();
    if args.porcelain {
        for (module, n) in &rows {
            writeln!(out, "{module}\t{n}").map_err(io_error)?;
        }
        writeln!(out, "total\t{total}").map_err(io_error)?;
        return Ok(());
    }
    writeln!(
        out,
        "channels={} blocks={} gasms={} scale={} state_dim={} expansion={} gau={} pffm={} in_channels={}",
        cfg.channels,
        cfg.n_fgblocks,
        cfg.n_gasm_per_block,
        cfg.scale,
        cfg.state_dim,
        cfg.expansion,
        cfg.use_gau,
        cfg.use_pffm,
        cfg.in_channels
    )
    .map_err(io_error)?;
    for (module, n) in &rows {
        writeln!(out, "{module:<10} {n:>10}").map_err(io_error)?;
    }
    writeln!(out, "{:<10} {total:>10}", "total").map_err(io_error)?;
    Ok(())
}
