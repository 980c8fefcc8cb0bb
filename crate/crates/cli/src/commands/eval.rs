use std::io::Write;
use std::path::Path;

use fgmamba_core::training::metrics::SSIM_WINDOW;
use fgmamba_core::training::{psnr, ssim};

use super::{fixed4, io_error};
use crate::cli::EvalArgs;
use crate::error::CliError;
use crate::image::{list_images, Image};

/// Metrics of one SR/HR pair. `psnr` and `ssim` use peak 1 on [0, 1]
/// values; `psnr255` uses peak 255 on byte-scaled values.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub name: String,
    pub psnr: f64,
    pub psnr255: f64,
    pub ssim: f64,
}

fn listing(dir: &Path) -> Result<Vec<std::path::PathBuf>, CliError> {
    list_images(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
}

/// Pairs images by file name and scores each pair.
pub fn evaluate_dirs(sr_dir: &Path, hr_dir: &Path) -> Result<Vec<EvalRow>, CliError> {
    let (sr, hr) = (listing(sr_dir)?, listing(hr_dir)?);
    if sr.len() != hr.len() {
        return Err(CliError::EvalMismatch(format!(
            "{} SR images but {} HR images",
            sr.len(),
            hr.len()
        )));
    }
    if sr.is_empty() {
        return Err(CliError::EvalMismatch("no images found".into()));
    }
    let mut rows = Vec::with_capacity(sr.len());
    for (s, h) in sr.iter().zip(&hr) {
        let name = s.file_name().unwrap_or_default().to_string_lossy().into_owned();
        if h.file_name() != s.file_name() {
            return Err(CliError::EvalMismatch(format!(
                "{name} has no counterpart (found {})",
                h.display()
            )));
        }
        let a = Image::load(s).map_err(|e| CliError::Data(e.to_string()))?;
        let b = Image::load(h).map_err(|e| CliError::Data(e.to_string()))?;
        if (a.channels, a.height, a.width) != (b.channels, b.height, b.width) {
            return Err(CliError::EvalMismatch(format!(
                "{name}: {}x{}x{} vs {}x{}x{}",
                a.channels, a.height, a.width, b.channels, b.height, b.width
            )));
        }
        if a.height < SSIM_WINDOW || a.width < SSIM_WINDOW {
            return Err(CliError::EvalMismatch(format!(
                "{name}: {}x{} is smaller than the {SSIM_WINDOW}px SSIM window",
                a.width, a.height
            )));
        }
        let (ta, tb) = (a.to_tensor(), b.to_tensor());
        let err = |e: fgmamba_core::Error| CliError::Other(e.to_string());
        let bytes = |t: &fgmamba_core::Tensor<f32>| t.map(|v| v * 255.0);
        rows.push(EvalRow {
            psnr: psnr(&ta, &tb, 1.0).map_err(err)?,
            psnr255: psnr(&bytes(&ta), &bytes(&tb), 255.0).map_err(err)?,
            ssim: ssim(&ta, &tb, 1.0).map_err(err)?,
            name,
        });
    }
    Ok(rows)
}

pub(super) fn run(args: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let rows = evaluate_dirs(&args.sr_dir, &args.hr_dir)?;
    let n = rows.len() as f64;
    let mean = EvalRow {
        name: "mean".into(),
        psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
        psnr255: rows.iter().map(|r| r.psnr255).sum::<f64>() / n,
        ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
    };
    if !args.porcelain {
        writeln!(out, "{:<24} {:>9} {:>9} {:>7}", "image", "psnr", "psnr255", "ssim").map_err(io_error)?;
    }
    for r in rows.iter().chain(std::iter::once(&mean)) {
        if args.porcelain {
            writeln!(out, "{}\t{}\t{}\t{}", r.name, r.psnr, r.psnr255, r.ssim)
        } else {
            writeln!(
                out,
                "{:<24} {:>9} {:>9} {:>7}",
                r.name,
                fixed4(r.psnr),
                fixed4(r.psnr255),
                fixed4(r.ssim)
            )
        }
        .map_err(io_error)?;
    }
    Ok(())
}
