use std::io::Write;

use super::{core_error, io_error};
use crate::checkpoint;
use crate::cli::InferArgs;
use crate::error::CliError;
use crate::image::Image;

pub(super) fn run(args: &InferArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let model = checkpoint::load(&args.checkpoint).map_err(|e| CliError::Checkpoint(e.to_string()))?;
    let cfg = *model.config();
    if let Some(s) = args.scale {
        if s != cfg.scale {
            return Err(CliError::Checkpoint(format!(
                "requested scale {s} but checkpoint was trained for scale {}",
                cfg.scale
            )));
        }
    }
    let input = Image::load(&args.input).map_err(|e| CliError::Data(e.to_string()))?;
    if input.channels != cfg.in_channels {
        return Err(CliError::Checkpoint(format!(
            "input has {} channels, checkpoint expects {}",
            input.channels, cfg.in_channels
        )));
    }
    let x = input
        .to_tensor()
        .reshaped(vec![1, input.channels, input.height, input.width])
        .map_err(|e| CliError::Other(e.to_string()))?;
    let y = model.infer(&x).map_err(core_error)?;
    let sr = Image::from_tensor(&y).map_err(|e| CliError::Other(e.to_string()))?;
    sr.save(&args.output).map_err(|e| CliError::Other(e.to_string()))?;
    writeln!(
        out,
        "{}x{} -> {}x{} ({})",
        input.width,
        input.height,
        sr.width,
        sr.height,
        args.output.display()
    )
    .map_err(io_error)
}
