//! Gated attention unit and the plain channel-attention block.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::ops::{ConvParams, ConvSpec};
use crate::params::{join, Bindings, Declarations, Init, Scope};
use crate::real::Real;

/// Squeeze ratio of the channel map's bottleneck.
pub const CHANNEL_REDUCTION: usize = 4;
/// Default spatial-map kernel size.
pub const SPATIAL_KERNEL: usize = 7;

/// Squeeze-and-excite weights: C → C/r → C.
#[derive(Debug, Clone, Copy)]
pub struct ChannelAttentionVars {
    pub squeeze_weight: Var,
    pub squeeze_bias: Var,
    pub excite_weight: Var,
    pub excite_bias: Var,
}

impl ChannelAttentionVars {
    pub fn declare(decls: &mut Declarations, prefix: &str, channels: usize) {
        let hidden = channels / CHANNEL_REDUCTION;
        decls.add(
            join(prefix, "squeeze.weight"),
            [hidden, channels],
            Init::FanIn(channels),
        );
        decls.add(join(prefix, "squeeze.bias"), [hidden], Init::FanIn(channels));
        decls.add(join(prefix, "excite.weight"), [channels, hidden], Init::FanIn(hidden));
        decls.add(join(prefix, "excite.bias"), [channels], Init::FanIn(hidden));
    }

    pub fn bind(bindings: &Bindings, prefix: &str) -> Result<Self> {
        let s = Scope::new(bindings, prefix);
        Ok(Self {
            squeeze_weight: s.get("squeeze.weight")?,
            squeeze_bias: s.get("squeeze.bias")?,
            excite_weight: s.get("excite.weight")?,
            excite_bias: s.get("excite.bias")?,
        })
    }
}

/// k×k convolution over the stacked (mean, max) channel statistics.
#[derive(Debug, Clone, Copy)]
pub struct SpatialAttentionVars {
    /// (1, 2, k, k)
    pub weight: Var,
    /// (1)
    pub bias: Var,
}

impl SpatialAttentionVars {
    pub fn declare(decls: &mut Declarations, prefix: &str, kernel: usize) {
        let fan_in = 2 * kernel * kernel;
        decls.add(join(prefix, "weight"), [1, 2, kernel, kernel], Init::FanIn(fan_in));
        decls.add(join(prefix, "bias"), [1], Init::FanIn(fan_in));
    }

    pub fn bind(bindings: &Bindings, prefix: &str) -> Result<Self> {
        let s = Scope::new(bindings, prefix);
        Ok(Self {
            weight: s.get("weight")?,
            bias: s.get("bias")?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct GauVars {
    pub channel: ChannelAttentionVars,
    pub spatial: SpatialAttentionVars,
    /// Three independent 1×1 gate convolutions (C → C, with bias).
    pub gates: [ConvParams; 3],
}

impl GauVars {
    pub fn declare(decls: &mut Declarations, prefix: &str, channels: usize) {
        ChannelAttentionVars::declare(decls, &join(prefix, "channel"), channels);
        SpatialAttentionVars::declare(decls, &join(prefix, "spatial"), SPATIAL_KERNEL);
        for k in 1..=3 {
            let g = join(prefix, &format!("gate{k}"));
            decls.add(join(&g, "weight"), [channels, channels, 1, 1], Init::FanIn(channels));
            decls.add(join(&g, "bias"), [channels], Init::FanIn(channels));
        }
    }

    pub fn bind(bindings: &Bindings, prefix: &str) -> Result<Self> {
        let gate = |k: usize| -> Result<ConvParams> {
            let s = Scope::new(bindings, prefix);
            Ok(ConvParams {
                weight: s.get(&format!("gate{k}.weight"))?,
                bias: Some(s.get(&format!("gate{k}.bias"))?),
                spec: ConvSpec::same(1),
            })
        };
        Ok(Self {
            channel: ChannelAttentionVars::bind(bindings, &join(prefix, "channel"))?,
            spatial: SpatialAttentionVars::bind(bindings, &join(prefix, "spatial"))?,
            gates: [gate(1)?, gate(2)?, gate(3)?],
        })
    }
}

/// Per-channel weights in (0, 1): (B,C,H,W) → (B,C,1,1).
pub fn channel_attention_map<T: Real>(tape: &mut Tape<T>, x: Var, p: &ChannelAttentionVars) -> Result<Var> {
    let channels = tape.value(x).dims4("channel_attention")?.1;
    if channels < CHANNEL_REDUCTION {
        return Err(Error::InvalidConfig(format!(
            "channel attention needs at least {CHANNEL_REDUCTION} channels, got {channels}"
        )));
    }
    let pooled = tape.global_avg_pool(x)?;
    let hidden = tape.linear(pooled, p.squeeze_weight, Some(p.squeeze_bias))?;
    let hidden = tape.silu(hidden);
    let logits = tape.linear(hidden, p.excite_weight, Some(p.excite_bias))?;
    Ok(tape.sigmoid(logits))
}

/// Per-pixel weights in (0, 1): (B,C,H,W) → (B,1,H,W).
pub fn spatial_attention_map<T: Real>(tape: &mut Tape<T>, x: Var, p: &SpatialAttentionVars) -> Result<Var> {
    let kernel = tape.shape(p.weight)[2..].to_vec();
    if kernel.len() != 2 || kernel[0] != kernel[1] || kernel[0].is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!(
            "spatial attention kernel must be square and odd, got {kernel:?}"
        )));
    }
    let mean = tape.channel_mean(x)?;
    let max = tape.channel_max(x)?;
    let stats = tape.concat_channels(&[mean, max])?;
    let conv = ConvParams {
        weight: p.weight,
        bias: Some(p.bias),
        spec: ConvSpec::same(kernel[0]),
    };
    let logits = tape.conv2d(stats, &conv)?;
    Ok(tape.sigmoid(logits))
}

/// F ⊙ (A_c ⊙ g₁ ⊙ A_s ⊙ g₂) ⊙ g₃.
pub fn gau_forward<T: Real>(tape: &mut Tape<T>, x: Var, p: &GauVars) -> Result<Var> {
    let a_c = channel_attention_map(tape, x, &p.channel)?;
    let a_s = spatial_attention_map(tape, x, &p.spatial)?;
    let mut gates = [x; 3];
    for (g, conv) in gates.iter_mut().zip(&p.gates) {
        let logits = tape.conv2d(x, conv)?;
        *g = tape.sigmoid(logits);
    }
    let mut attn = tape.mul(gates[0], a_c)?;
    attn = tape.mul(attn, a_s)?;
    attn = tape.mul(attn, gates[1])?;
    let gated = tape.mul(x, attn)?;
    Ok(tape.mul(gated, gates[2])?)
}

/// x ⊙ channel_attention_map(x).
pub fn channel_attention_block<T: Real>(tape: &mut Tape<T>, x: Var, p: &ChannelAttentionVars) -> Result<Var> {
    let weights = channel_attention_map(tape, x, p)?;
    Ok(tape.mul(x, weights)?)
}
