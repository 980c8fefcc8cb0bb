use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::time::Instant;

use fgmamba_core::model::Preset;
use fgmamba_core::training::{train_loop, AdamConfig, Dataset, LogRecord, TrainConfig};

use super::{core_error, io_error};
use crate::checkpoint;
use crate::cli::TrainArgs;
use crate::config_file::ConfigFile;
use crate::error::CliError;
use crate::image::{list_images, Image};

fn load_dataset(args: &TrainArgs) -> Result<Dataset, CliError> {
    let dir = &args.hr_dir;
    let paths = list_images(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    if paths.is_empty() {
        return Err(CliError::Data(format!("no .pgm/.ppm images in {}", dir.display())));
    }
    let images = paths
        .iter()
        .map(|p| Image::load(p).map(|img| img.to_tensor()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Data(e.to_string()))?;
    Dataset::new(images).map_err(|e| CliError::Data(e.to_string()))
}

/// Defaults, then config file, then flags.
fn train_config(args: &TrainArgs, file: &ConfigFile) -> Result<TrainConfig, CliError> {
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        steps: args.steps.or(file.get("steps")?).unwrap_or(d.steps),
        batch_size: args.batch_size.or(file.get("batch_size")?).unwrap_or(d.batch_size),
        patch_size: args.patch_size.or(file.get("patch_size")?).unwrap_or(d.patch_size),
        adam: AdamConfig {
            lr: args.lr.or(file.get("lr")?).unwrap_or(d.adam.lr),
            ..d.adam
        },
        augment: !args.no_augment && file.get("augment")?.unwrap_or(d.augment),
        seed: args.seed.or(file.get("seed")?).unwrap_or(d.seed),
        eval_every: args.eval_every.or(file.get("eval_every")?).unwrap_or(d.eval_every),
    };
    if cfg.batch_size == 0 {
        return Err(CliError::Usage("batch size must be positive".into()));
    }
    if !(cfg.adam.lr >= 0.0 && cfg.adam.lr.is_finite()) {
        return Err(CliError::Usage(format!("invalid learning rate {}", cfg.adam.lr)));
    }
    Ok(cfg)
}

fn record_row(r: &LogRecord, porcelain: bool) -> String {
    match (porcelain, r.validation) {
        (true, Some(v)) => format!("{}\t{}\t{}\t{}", r.step, r.loss, v.psnr, v.ssim),
        (true, None) => format!("{}\t{}\t\t", r.step, r.loss),
        (false, _) => r.to_string(),
    }
}

pub(super) fn run(args: &TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let file = args.model.config_file()?;
    let tc = train_config(args, &file)?;
    let data = load_dataset(args)?;
    let mut model_args = args.model.clone();
    if !model_args.pins_in_channels(&file) {
        model_args.in_channels = Some(data.channels());
    }
    let mc = model_args.resolve(Preset::Desk, &file)?;
    if mc.in_channels != data.channels() {
        return Err(CliError::Data(format!(
            "images have {} channels but the model is configured for {}",
            data.channels(),
            mc.in_channels
        )));
    }

    let log_path = args.log.clone().unwrap_or_else(|| {
        let mut p = PathBuf::from(&args.out);
        p.set_extension("log");
        p
    });
    let mut log =
        BufWriter::new(File::create(&log_path).map_err(|e| CliError::Other(format!("{}: {e}", log_path.display())))?);

    let start = Instant::now();
    let mut failure = None;
    let outcome = train_loop(mc, &data, &tc, |r| {
        let written = writeln!(log, "{r}").and_then(|_| log.flush()).and_then(|_| {
            if args.porcelain {
                writeln!(out, "{}", record_row(r, true))
            } else {
                let t = start.elapsed().as_secs_f64();
                writeln!(out, "[{t:>8.1}s] {}", record_row(r, false))
            }
        });
        if let Err(e) = written {
            failure.get_or_insert(e);
        }
    });
    if let Some(e) = failure {
        return Err(io_error(e));
    }
    let outcome = outcome.map_err(core_error)?;

    checkpoint::save(&outcome.model, &args.out).map_err(|e| CliError::Other(e.to_string()))?;
    if !args.porcelain {
        writeln!(
            out,
            "wrote {} ({} parameters) and {} in {:.1}s",
            args.out.display(),
            outcome.model.params().scalar_count(),
            log_path.display(),
            start.elapsed().as_secs_f64()
        )
        .map_err(io_error)?;
    }
    Ok(())
}
