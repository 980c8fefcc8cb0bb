use std::io::Write;

use fgmamba_core::model::gradcheck::{self, GradcheckOptions, TOLERANCE};
use fgmamba_core::OpKind;

use super::{core_error, io_error};
use crate::cli::GradcheckArgs;
use crate::error::CliError;

pub(super) fn run(args: &GradcheckArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let fault = match &args.inject_fault {
        Some(name) => Some(OpKind::from_name(name).ok_or_else(|| CliError::Usage(format!("unknown op `{name}`")))?),
        None => None,
    };
    if args.size < fgmamba_core::model::MIN_INPUT_EXTENT {
        return Err(CliError::Usage(format!(
            "--size must be at least {}",
            fgmamba_core::model::MIN_INPUT_EXTENT
        )));
    }
    let opts = GradcheckOptions {
        seed: args.seed,
        height: args.size,
        width: args.size,
        samples_per_tensor: args.samples,
        fault,
        ..GradcheckOptions::default()
    };

    if args.list {
        for (group, names, entries) in gradcheck::plan(&opts).map_err(core_error)? {
            if args.porcelain {
                writeln!(out, "{group}\t{}\t{entries}\t{}", names.len(), names.join(",")).map_err(io_error)?;
            } else {
                writeln!(out, "{group}: {} tensors, {entries} entries", names.len()).map_err(io_error)?;
                for name in names {
                    writeln!(out, "  {name}").map_err(io_error)?;
                }
            }
        }
        return Ok(());
    }

    let report = gradcheck::run(&opts).map_err(core_error)?;
    if !args.porcelain {
        writeln!(
            out,
            "{:<18} {:>7} {:>8} {:>12}  {:<6} worst",
            "group", "tensors", "entries", "max_rel_err", "status"
        )
        .map_err(io_error)?;
    }
    for g in &report.groups {
        let status = if g.passed() { "ok" } else { "FAIL" };
        if args.porcelain {
            writeln!(
                out,
                "{}\t{}\t{}\t{:e}\t{status}\t{}",
                g.group, g.tensors, g.checked, g.max_error, g.worst
            )
        } else {
            writeln!(
                out,
                "{:<18} {:>7} {:>8} {:>12.3e}  {status:<6} {}",
                g.group, g.tensors, g.checked, g.max_error, g.worst
            )
        }
        .map_err(io_error)?;
    }
    if report.passed() {
        return Ok(());
    }
    let offenders: Vec<String> = report
        .offenders()
        .map(|g| format!("{} ({:.3e} at {})", g.group, g.max_error, g.worst))
        .collect();
    Err(CliError::GradcheckFailed(format!(
        "tolerance {TOLERANCE:e} exceeded by {}",
        offenders.join(", ")
    )))
}
