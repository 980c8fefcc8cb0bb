//! GASM, PFFM, FGBlock and the full super-resolution network.

mod config;
pub mod gradcheck;

pub use config::{ModelConfig, Preset};

use crate::attention::{channel_attention_block, gau_forward, ChannelAttentionVars, GauVars};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::ops::{ConvParams, ConvSpec, LAYER_NORM_EPS};
use crate::params::{join, Bindings, Declarations, Init, ParamDecl, ParamStore, Scope};
use crate::real::Real;
use crate::ssm::{vssm2d_forward, VssmVars};
use crate::tensor::Tensor;

/// Pyramid scales of the frequency fusion module.
pub const PYRAMID_SCALES: [usize; 3] = [1, 2, 4];
/// Smallest accepted input extent.
pub const MIN_INPUT_EXTENT: usize = 8;

fn declare_conv(decls: &mut Declarations, prefix: &str, out: usize, inp: usize, kernel: usize) {
    let fan_in = inp * kernel * kernel;
    decls.add(join(prefix, "weight"), [out, inp, kernel, kernel], Init::FanIn(fan_in));
    decls.add(join(prefix, "bias"), [out], Init::FanIn(fan_in));
}

fn bind_conv(bindings: &Bindings, prefix: &str, spec: ConvSpec) -> Result<ConvParams> {
    let s = Scope::new(bindings, prefix);
    Ok(ConvParams {
        weight: s.get("weight")?,
        bias: Some(s.get("bias")?),
        spec,
    })
}

fn declare_norm(decls: &mut Declarations, prefix: &str, channels: usize) {
    decls.add(join(prefix, "gain"), [channels], Init::Const(1.0));
    decls.add(join(prefix, "bias"), [channels], Init::Const(0.0));
}

/// Gated attention-enhanced state-space module.
#[derive(Debug, Clone)]
pub struct GasmVars {
    pub norm1: (Var, Var),
    pub vssm: VssmVars,
    pub gau: Option<GauVars>,
    pub gamma1: Var,
    pub norm2: (Var, Var),
    pub conv1: ConvParams,
    pub attention: ChannelAttentionVars,
    pub gamma2: Var,
    pub conv2: ConvParams,
}

impl GasmVars {
    pub fn declare(decls: &mut Declarations, prefix: &str, cfg: &ModelConfig) {
        let c = cfg.channels;
        declare_norm(decls, &join(prefix, "norm1"), c);
        VssmVars::declare(decls, &join(prefix, "vssm"), c, cfg.expansion, cfg.state_dim);
        if cfg.use_gau {
            GauVars::declare(decls, &join(prefix, "gau"), c);
        }
        decls.add(join(prefix, "gamma1"), [1], Init::Const(1.0));
        declare_norm(decls, &join(prefix, "norm2"), c);
        declare_conv(decls, &join(prefix, "conv1"), c, c, 3);
        ChannelAttentionVars::declare(decls, &join(prefix, "attention"), c);
        decls.add(join(prefix, "gamma2"), [1], Init::Const(1.0));
        declare_conv(decls, &join(prefix, "conv2"), c, c, 3);
    }

    pub fn bind(bindings: &Bindings, prefix: &str, cfg: &ModelConfig) -> Result<Self> {
        let s = Scope::new(bindings, prefix);
        Ok(Self {
            norm1: (s.get("norm1.gain")?, s.get("norm1.bias")?),
            vssm: VssmVars::bind(bindings, &join(prefix, "vssm"))?,
            gau: if cfg.use_gau {
                Some(GauVars::bind(bindings, &join(prefix, "gau"))?)
            } else {
                None
            },
            gamma1: s.get("gamma1")?,
            norm2: (s.get("norm2.gain")?, s.get("norm2.bias")?),
            conv1: bind_conv(bindings, &join(prefix, "conv1"), ConvSpec::same(3))?,
            attention: ChannelAttentionVars::bind(bindings, &join(prefix, "attention"))?,
            gamma2: s.get("gamma2")?,
            conv2: bind_conv(bindings, &join(prefix, "conv2"), ConvSpec::same(3))?,
        })
    }
}

/// norm → {vssm, gau} → + γ₁·F_x → norm → conv → channel attention → + γ₂·F_x → conv.
pub fn gasm_forward<T: Real>(tape: &mut Tape<T>, fx: Var, p: &GasmVars) -> Result<Var> {
    let normed = tape.layer_norm(fx, p.norm1.0, p.norm1.1, LAYER_NORM_EPS)?;
    let mut sum = vssm2d_forward(tape, normed, &p.vssm)?;
    if let Some(gau) = &p.gau {
        let gated = gau_forward(tape, normed, gau)?;
        sum = tape.add(sum, gated)?;
    }
    let skip1 = tape.mul(fx, p.gamma1)?;
    let added = tape.add(sum, skip1)?;
    let normed = tape.layer_norm(added, p.norm2.0, p.norm2.1, LAYER_NORM_EPS)?;
    let conv = tape.conv2d(normed, &p.conv1)?;
    let attended = channel_attention_block(tape, conv, &p.attention)?;
    let skip2 = tape.mul(fx, p.gamma2)?;
    let added = tape.add(attended, skip2)?;
    Ok(tape.conv2d(added, &p.conv2)?)
}

/// Pyramid frequency fusion module.
#[derive(Debug, Clone, Copy)]
pub struct PffmVars {
    /// One weight per entry of [`PYRAMID_SCALES`].
    pub alphas: [Var; 3],
    pub fuse: ConvParams,
    pub gamma: Var,
}

impl PffmVars {
    pub fn declare(decls: &mut Declarations, prefix: &str, cfg: &ModelConfig) {
        let c = cfg.channels;
        for s in PYRAMID_SCALES {
            decls.add(join(prefix, &format!("alpha{s}")), [1], Init::Const(1.0));
        }
        declare_conv(decls, &join(prefix, "fuse"), c, 3 * c / cfg.fusion_groups(), 1);
        decls.add(join(prefix, "gamma"), [1], Init::Const(0.1));
    }

    pub fn bind(bindings: &Bindings, prefix: &str, cfg: &ModelConfig) -> Result<Self> {
        let s = Scope::new(bindings, prefix);
        let alpha = |k: usize| s.get(&format!("alpha{}", PYRAMID_SCALES[k]));
        Ok(Self {
            alphas: [alpha(0)?, alpha(1)?, alpha(2)?],
            fuse: bind_conv(
                bindings,
                &join(prefix, "fuse"),
                ConvSpec::grouped(1, cfg.fusion_groups()),
            )?,
            gamma: s.get("gamma")?,
        })
    }
}

/// Multi-scale high-frequency extraction, α-weighted, fused and scaled by γ.
pub fn pffm_forward<T: Real>(tape: &mut Tape<T>, f: Var, p: &PffmVars) -> Result<Var> {
    let (_, _, h, w) = tape.value(f).dims4("pffm")?;
    let mut branches = Vec::with_capacity(PYRAMID_SCALES.len());
    for (s, alpha) in PYRAMID_SCALES.into_iter().zip(p.alphas) {
        let high = if s == 1 {
            tape.highfreq(f)?
        } else {
            let pooled = tape.avg_pool2d(f, s)?;
            let high = tape.highfreq(pooled)?;
            let up = tape.upsample_nearest(high, s)?;
            tape.crop(up, h, w)?
        };
        branches.push(tape.mul(high, alpha)?);
    }
    let stacked = tape.concat_channels(&branches)?;
    let fused = tape.conv2d(stacked, &p.fuse)?;
    Ok(tape.mul(fused, p.gamma)?)
}

#[derive(Debug, Clone)]
pub struct FgBlockVars {
    pub gasms: Vec<GasmVars>,
    pub pffm: Option<PffmVars>,
}

impl FgBlockVars {
    pub fn declare(decls: &mut Declarations, prefix: &str, cfg: &ModelConfig) {
        for j in 0..cfg.n_gasm_per_block {
            GasmVars::declare(decls, &join(prefix, &format!("gasm{j}")), cfg);
        }
        if cfg.use_pffm {
            PffmVars::declare(decls, &join(prefix, "pffm"), cfg);
        }
    }

    pub fn bind(bindings: &Bindings, prefix: &str, cfg: &ModelConfig) -> Result<Self> {
        let gasms = (0..cfg.n_gasm_per_block)
            .map(|j| GasmVars::bind(bindings, &join(prefix, &format!("gasm{j}")), cfg))
            .collect::<Result<_>>()?;
        let pffm = if cfg.use_pffm {
            Some(PffmVars::bind(bindings, &join(prefix, "pffm"), cfg)?)
        } else {
            None
        };
        Ok(Self { gasms, pffm })
    }
}

/// GASM stack, optional PFFM residual, block residual.
pub fn fgblock_forward<T: Real>(tape: &mut Tape<T>, x: Var, p: &FgBlockVars) -> Result<Var> {
    let mut g = x;
    for gasm in &p.gasms {
        g = gasm_forward(tape, g, gasm)?;
    }
    if let Some(pffm) = &p.pffm {
        let freq = pffm_forward(tape, g, pffm)?;
        g = tape.add(g, freq)?;
    }
    Ok(tape.add(g, x)?)
}

#[derive(Debug, Clone)]
pub struct NetworkVars {
    pub head: ConvParams,
    pub blocks: Vec<FgBlockVars>,
    pub expand: ConvParams,
    pub out: ConvParams,
}

impl NetworkVars {
    pub fn declare(cfg: &ModelConfig) -> Vec<ParamDecl> {
        let mut decls = Declarations::new();
        let c = cfg.channels;
        declare_conv(&mut decls, "head", c, cfg.in_channels, 3);
        for i in 0..cfg.n_fgblocks {
            FgBlockVars::declare(&mut decls, &format!("blocks.{i}"), cfg);
        }
        declare_conv(&mut decls, "tail.expand", c * cfg.scale * cfg.scale, c, 3);
        declare_conv(&mut decls, "tail.out", cfg.in_channels, c, 3);
        decls.into_vec()
    }

    pub fn bind(bindings: &Bindings, cfg: &ModelConfig) -> Result<Self> {
        let same = ConvSpec::same(3);
        Ok(Self {
            head: bind_conv(bindings, "head", same)?,
            blocks: (0..cfg.n_fgblocks)
                .map(|i| FgBlockVars::bind(bindings, &format!("blocks.{i}"), cfg))
                .collect::<Result<_>>()?,
            expand: bind_conv(bindings, "tail.expand", same)?,
            out: bind_conv(bindings, "tail.out", same)?,
        })
    }
}

/// Shallow conv → FGBlocks → global residual → conv → pixel shuffle → conv.
pub fn model_forward<T: Real>(tape: &mut Tape<T>, x: Var, p: &NetworkVars, cfg: &ModelConfig) -> Result<Var> {
    let (_, c, h, w) = tape.value(x).dims4("model")?;
    if c != cfg.in_channels {
        return Err(Error::InvalidInput(format!(
            "model expects {} input channels, got {c}",
            cfg.in_channels
        )));
    }
    if h < MIN_INPUT_EXTENT || w < MIN_INPUT_EXTENT {
        return Err(Error::InvalidInput(format!(
            "input extents must be at least {MIN_INPUT_EXTENT}, got {h}x{w}"
        )));
    }
    let shallow = tape.conv2d(x, &p.head)?;
    let mut f = shallow;
    for block in &p.blocks {
        f = fgblock_forward(tape, f, block)?;
    }
    let fused = tape.add(f, shallow)?;
    let expanded = tape.conv2d(fused, &p.expand)?;
    let up = tape.pixel_shuffle(expanded, cfg.scale)?;
    Ok(tape.conv2d(up, &p.out)?)
}

/// Exact number of learnable scalars.
pub fn param_count(cfg: &ModelConfig) -> usize {
    NetworkVars::declare(cfg)
        .iter()
        .map(|d| d.shape.iter().product::<usize>())
        .sum()
}

/// Coarse module a parameter belongs to, for reporting.
pub fn module_of(name: &str) -> &'static str {
    if name.starts_with("head.") {
        "head"
    } else if name.starts_with("tail.") {
        "tail"
    } else if name.contains(".vssm.") {
        "vssm"
    } else if name.contains(".gau.") {
        "gau"
    } else if name.contains(".pffm.") {
        "pffm"
    } else {
        "gasm_tail"
    }
}

pub const MODULES: [&str; 6] = ["head", "vssm", "gau", "gasm_tail", "pffm", "tail"];

/// Parameter counts per module, in [`MODULES`] order.
pub fn param_breakdown(cfg: &ModelConfig) -> Vec<(&'static str, usize)> {
    let decls = NetworkVars::declare(cfg);
    MODULES
        .iter()
        .map(|&m| {
            let n = decls
                .iter()
                .filter(|d| module_of(&d.name) == m)
                .map(|d| d.shape.iter().product::<usize>())
                .sum();
            (m, n)
        })
        .collect()
}

/// A configured network with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FgMamba<T> {
    config: ModelConfig,
    params: ParamStore<T>,
}

impl<T: Real> FgMamba<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = ParamStore::initialize(&NetworkVars::declare(&config), seed);
        Ok(Self { config, params })
    }

    /// Wraps existing parameters, checking names and shapes against the config.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        params.validate(&NetworkVars::declare(&config))?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }

    /// Records parameters and the forward graph on `tape`.
    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<(Bindings, Var)> {
        let bindings = Bindings::bind(tape, &self.params);
        let vars = NetworkVars::bind(&bindings, &self.config)?;
        let y = model_forward(tape, x, &vars, &self.config)?;
        Ok((bindings, y))
    }

    /// Forward pass without gradient tracking.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bindings = self
            .params
            .iter()
            .map(|(name, t)| (name.clone(), tape.constant(t.clone())))
            .fold(Bindings::default(), |mut b, (n, v)| {
                b.insert(n, v);
                b
            });
        let vars = NetworkVars::bind(&bindings, &self.config)?;
        let input = tape.constant(x.clone());
        let y = model_forward(&mut tape, input, &vars, &self.config)?;
        Ok(tape.detach(y))
    }
}

#[cfg(test)]
mod tests;
