//! Selective state-space scan (S6) and the four-directional 2-D block built on it.

mod scan;

pub use scan::ScanDirection;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::ops::{ConvParams, ConvSpec};
use crate::params::{join, Bindings, Declarations, Init, Scope};
use crate::real::Real;

/// Parameter handles for one selective scan over `channels` lanes with
/// `states` hidden units each.
#[derive(Debug, Clone, Copy)]
pub struct S6Vars {
    /// (channels, states); A = −exp(a_log)
    pub a_log: Var,
    /// (channels)
    pub d_skip: Var,
    /// (channels, channels)
    pub delta_proj: Var,
    /// (channels)
    pub delta_bias: Var,
    /// (states, channels)
    pub b_proj: Var,
    /// (states, channels)
    pub c_proj: Var,
}

impl S6Vars {
    pub fn declare(decls: &mut Declarations, prefix: &str, channels: usize, states: usize) {
        decls.add(join(prefix, "a_log"), [channels, states], Init::StateLog);
        decls.add(join(prefix, "d_skip"), [channels], Init::Const(1.0));
        decls.add(
            join(prefix, "delta_proj.weight"),
            [channels, channels],
            Init::FanIn(channels),
        );
        decls.add(join(prefix, "delta_proj.bias"), [channels], Init::StepBias);
        decls.add(join(prefix, "b_proj.weight"), [states, channels], Init::FanIn(channels));
        decls.add(join(prefix, "c_proj.weight"), [states, channels], Init::FanIn(channels));
    }

    pub fn bind(bindings: &Bindings, prefix: &str) -> Result<Self> {
        let s = Scope::new(bindings, prefix);
        Ok(Self {
            a_log: s.get("a_log")?,
            d_skip: s.get("d_skip")?,
            delta_proj: s.get("delta_proj.weight")?,
            delta_bias: s.get("delta_proj.bias")?,
            b_proj: s.get("b_proj.weight")?,
            c_proj: s.get("c_proj.weight")?,
        })
    }
}

/// Projects Δ, B, C from a (B,D,H,W) feature map and scans it in `direction`.
pub fn s6_scan<T: Real>(tape: &mut Tape<T>, x: Var, p: &S6Vars, direction: ScanDirection) -> Result<Var> {
    let pre = tape.linear(x, p.delta_proj, Some(p.delta_bias))?;
    let delta = tape.softplus(pre);
    let bmat = tape.linear(x, p.b_proj, None)?;
    let cmat = tape.linear(x, p.c_proj, None)?;
    Ok(tape.selective_scan(x, delta, p.a_log, bmat, cmat, p.d_skip, direction)?)
}

/// Scan over a (B, D, L) sequence of channel vectors.
pub fn selective_scan_1d<T: Real>(tape: &mut Tape<T>, x: Var, p: &S6Vars) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let [b, d, l] = shape[..] else {
        return Err(Error::InvalidInput(format!(
            "selective_scan_1d expects (batch, channels, length), got {shape:?}"
        )));
    };
    if l == 0 {
        return Err(Error::InvalidInput("sequence length must be at least 1".into()));
    }
    let grid = tape.reshape(x, [b, d, 1, l])?;
    let y = s6_scan(tape, grid, p, ScanDirection::RowForward)?;
    Ok(tape.reshape(y, shape)?)
}

/// Handles for the 2-D state-space block.
#[derive(Debug, Clone)]
pub struct VssmVars {
    /// (inner, channels)
    pub in_proj: Var,
    /// (inner, channels)
    pub gate_proj: Var,
    /// depthwise 3×3 over the inner width: (inner, 1, 3, 3) and (inner)
    pub local_weight: Var,
    pub local_bias: Var,
    pub scans: [S6Vars; 4],
    /// (channels, inner)
    pub out_proj: Var,
}

impl VssmVars {
    pub fn declare(decls: &mut Declarations, prefix: &str, channels: usize, expansion: usize, states: usize) {
        let inner = channels * expansion;
        decls.add(join(prefix, "in_proj.weight"), [inner, channels], Init::FanIn(channels));
        decls.add(
            join(prefix, "gate_proj.weight"),
            [inner, channels],
            Init::FanIn(channels),
        );
        decls.add(join(prefix, "local.weight"), [inner, 1, 3, 3], Init::FanIn(9));
        decls.add(join(prefix, "local.bias"), [inner], Init::FanIn(9));
        for k in 0..4 {
            S6Vars::declare(decls, &join(prefix, &format!("scan{k}")), inner, states);
        }
        decls.add(join(prefix, "out_proj.weight"), [channels, inner], Init::FanIn(inner));
    }

    pub fn bind(bindings: &Bindings, prefix: &str) -> Result<Self> {
        let s = Scope::new(bindings, prefix);
        let scans = [0, 1, 2, 3].map(|k| S6Vars::bind(bindings, &join(prefix, &format!("scan{k}"))));
        let [s0, s1, s2, s3] = scans;
        Ok(Self {
            in_proj: s.get("in_proj.weight")?,
            gate_proj: s.get("gate_proj.weight")?,
            local_weight: s.get("local.weight")?,
            local_bias: s.get("local.bias")?,
            scans: [s0?, s1?, s2?, s3?],
            out_proj: s.get("out_proj.weight")?,
        })
    }
}

/// Expanded depthwise-conv features that every direction scans.
pub fn vssm_scan_input<T: Real>(tape: &mut Tape<T>, x: Var, p: &VssmVars) -> Result<Var> {
    let inner = tape.linear(x, p.in_proj, None)?;
    let groups = tape.shape(inner)[1];
    let local = ConvParams {
        weight: p.local_weight,
        bias: Some(p.local_bias),
        spec: ConvSpec::grouped(3, groups),
    };
    let conv = tape.conv2d(inner, &local)?;
    Ok(tape.silu(conv))
}

/// Four-directional state-space block: (B,C,H,W) → (B,C,H,W).
pub fn vssm2d_forward<T: Real>(tape: &mut Tape<T>, x: Var, p: &VssmVars) -> Result<Var> {
    let u = vssm_scan_input(tape, x, p)?;
    let mut merged: Option<Var> = None;
    // fixed summation order: row, row-reversed, column, column-reversed
    for (dir, scan) in ScanDirection::ALL.into_iter().zip(&p.scans) {
        let y = s6_scan(tape, u, scan, dir)?;
        merged = Some(match merged {
            None => y,
            Some(acc) => tape.add(acc, y)?,
        });
    }
    let mean = tape.scale(merged.expect("four directions"), 0.25);
    let z = tape.linear(x, p.gate_proj, None)?;
    let gate = tape.silu(z);
    let gated = tape.mul(mean, gate)?;
    Ok(tape.linear(gated, p.out_proj, None)?)
}
