//! Argument definitions.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use fgmamba_core::model::{ModelConfig, Preset};

use crate::config_file::ConfigFile;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "fgmamba", version, about = "Frequency-guided state-space super-resolution")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on a directory of HR images and write a checkpoint
    Train(TrainArgs),
    /// Super-resolve one image with a checkpoint
    Infer(InferArgs),
    /// Compare SR images against ground truth (PSNR / SSIM)
    Eval(EvalArgs),
    /// Finite-difference check of every parameter gradient on a tiny model
    Gradcheck(GradcheckArgs),
    /// Report parameter counts
    Params(ParamsArgs),
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    Preset::from_name(s).ok_or_else(|| format!("unknown preset `{s}` (paper, desk, tiny)"))
}

#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    /// Base architecture: paper, desk or tiny
    #[arg(long, value_parser = parse_preset)]
    pub preset: Option<Preset>,
    /// key=value file; explicit flags take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub channels: Option<usize>,
    /// Number of FGBlocks
    #[arg(long)]
    pub blocks: Option<usize>,
    /// GASMs per FGBlock
    #[arg(long)]
    pub gasms: Option<usize>,
    #[arg(long)]
    pub scale: Option<usize>,
    #[arg(long)]
    pub state_dim: Option<usize>,
    #[arg(long)]
    pub expansion: Option<usize>,
    /// 1 (gray) or 3 (RGB)
    #[arg(long)]
    pub in_channels: Option<usize>,
    /// Drop the gated attention unit
    #[arg(long)]
    pub no_gau: bool,
    /// Drop the pyramid frequency fusion module
    #[arg(long)]
    pub no_pffm: bool,
}

impl ModelArgs {
    pub fn config_file(&self) -> Result<ConfigFile, CliError> {
        match &self.config {
            Some(path) => ConfigFile::load(path),
            None => Ok(ConfigFile::default()),
        }
    }

    /// Preset, then config file, then flags.
    pub fn resolve(&self, default: Preset, file: &ConfigFile) -> Result<ModelConfig, CliError> {
        let preset = match (self.preset, file.raw("preset")) {
            (Some(p), _) => p,
            (None, Some(name)) => parse_preset(name).map_err(CliError::Usage)?,
            (None, None) => default,
        };
        let mut c = preset.config();
        let pick = |flag: Option<usize>, key: &str, current: usize| -> Result<usize, CliError> {
            Ok(flag.or(file.get(key)?).unwrap_or(current))
        };
        c.channels = pick(self.channels, "channels", c.channels)?;
        c.n_fgblocks = pick(self.blocks, "blocks", c.n_fgblocks)?;
        c.n_gasm_per_block = pick(self.gasms, "gasms", c.n_gasm_per_block)?;
        c.scale = pick(self.scale, "scale", c.scale)?;
        c.state_dim = pick(self.state_dim, "state_dim", c.state_dim)?;
        c.expansion = pick(self.expansion, "expansion", c.expansion)?;
        c.in_channels = pick(self.in_channels, "in_channels", c.in_channels)?;
        c.use_gau = !self.no_gau && file.get("gau")?.unwrap_or(c.use_gau);
        c.use_pffm = !self.no_pffm && file.get("pffm")?.unwrap_or(c.use_pffm);
        c.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(c)
    }

    /// Whether the input channel count was fixed by the user.
    pub fn pins_in_channels(&self, file: &ConfigFile) -> bool {
        self.in_channels.is_some() || file.raw("in_channels").is_some()
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of HR .pgm / .ppm images
    #[arg(long)]
    pub hr_dir: PathBuf,
    /// Checkpoint to write
    #[arg(long, default_value = "model.fgmb")]
    pub out: PathBuf,
    /// Metric log to write (default: checkpoint path with .log extension)
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// HR patch side in pixels
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Disable flip/rotation augmentation
    #[arg(long)]
    pub no_augment: bool,
    /// Validation cadence in steps
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Tab-separated progress rows without timestamps
    #[arg(long)]
    pub porcelain: bool,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Expected scale; must match the checkpoint
    #[arg(long)]
    pub scale: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of super-resolved images
    #[arg(long)]
    pub sr_dir: PathBuf,
    /// Directory of ground-truth images with matching file names
    #[arg(long)]
    pub hr_dir: PathBuf,
    /// Tab-separated rows with full precision
    #[arg(long)]
    pub porcelain: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Print the check matrix without running it
    #[arg(long)]
    pub list: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Entries checked per parameter tensor (default: all)
    #[arg(long)]
    pub samples: Option<usize>,
    /// Side of the square input
    #[arg(long, default_value_t = 8)]
    pub size: usize,
    #[arg(long)]
    pub porcelain: bool,
    /// Corrupt the backward rule of one op (verifies that the check can fail)
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    #[arg(long)]
    pub porcelain: bool,
    #[command(flatten)]
    pub model: ModelArgs,
}
