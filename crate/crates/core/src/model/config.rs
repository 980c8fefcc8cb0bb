use crate::attention::CHANNEL_REDUCTION;
use crate::error::{Error, Result};

/// Architecture hyperparameters. The parameter set is a pure function of this.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub channels: usize,
    pub n_fgblocks: usize,
    pub n_gasm_per_block: usize,
    pub scale: usize,
    pub state_dim: usize,
    pub expansion: usize,
    pub use_gau: bool,
    pub use_pffm: bool,
    pub in_channels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// ~0.72M parameters.
    Paper,
    /// Small enough to train in minutes on a laptop.
    Desk,
    /// Gradient-check size.
    Tiny,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Paper, Preset::Desk, Preset::Tiny];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Paper => "paper",
            Preset::Desk => "desk",
            Preset::Tiny => "tiny",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    pub fn config(self) -> ModelConfig {
        match self {
            // 717_041 parameters at ×2, 743_081 at ×3
            Preset::Paper => ModelConfig {
                channels: 24,
                n_fgblocks: 4,
                n_gasm_per_block: 6,
                scale: 2,
                state_dim: 4,
                expansion: 2,
                use_gau: true,
                use_pffm: true,
                in_channels: 1,
            },
            Preset::Desk => ModelConfig::desk(),
            Preset::Tiny => ModelConfig::tiny(),
        }
    }
}

impl ModelConfig {
    pub fn paper() -> Self {
        Preset::Paper.config()
    }

    pub fn desk() -> Self {
        Self {
            channels: 16,
            n_fgblocks: 2,
            n_gasm_per_block: 2,
            state_dim: 8,
            ..Self::tiny()
        }
    }

    pub fn tiny() -> Self {
        Self {
            channels: 8,
            n_fgblocks: 1,
            n_gasm_per_block: 1,
            scale: 2,
            state_dim: 4,
            expansion: 2,
            use_gau: true,
            use_pffm: true,
            in_channels: 1,
        }
    }

    /// Width of the state-space branch.
    pub fn inner_channels(&self) -> usize {
        self.channels * self.expansion
    }

    /// Groups of the pyramid fusion convolution: one per scale when the
    /// width allows it, otherwise a dense 1×1.
    pub fn fusion_groups(&self) -> usize {
        if self.channels.is_multiple_of(3) {
            3
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if !(2..=4).contains(&self.scale) {
            return fail(format!("scale must be 2, 3 or 4, got {}", self.scale));
        }
        if self.in_channels != 1 && self.in_channels != 3 {
            return fail(format!("in_channels must be 1 or 3, got {}", self.in_channels));
        }
        if self.channels == 0 {
            return fail("channels must be positive".into());
        }
        if self.n_fgblocks > 0 {
            if self.channels < CHANNEL_REDUCTION {
                return fail(format!(
                    "channels must be at least {CHANNEL_REDUCTION} for channel attention, got {}",
                    self.channels
                ));
            }
            if self.n_gasm_per_block == 0 {
                return fail("n_gasm_per_block must be positive".into());
            }
            if self.state_dim == 0 || self.expansion == 0 {
                return fail("state_dim and expansion must be positive".into());
            }
        }
        Ok(())
    }
}
