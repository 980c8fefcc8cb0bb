//! Finite-difference verification of every parameter gradient of a small network.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{FgMamba, ModelConfig};
use crate::autodiff::{OpKind, Tape};
use crate::error::Result;
use crate::tensor::Tensor;
use crate::testing::{random_tensor, relative_error};

pub const TOLERANCE: f64 = 1e-3;
pub const STEP: f64 = 1e-5;

/// Parameter groups reported separately, in display order.
pub const GROUPS: [&str; 7] = [
    "conv",
    "linear",
    "layer_norm",
    "s6",
    "gau",
    "channel_attention",
    "scalars",
];

pub fn group_of(name: &str) -> &'static str {
    let leaf = name.rsplit('.').next().unwrap_or(name);
    if leaf.starts_with("gamma") || leaf.starts_with("alpha") {
        "scalars"
    } else if name.contains(".gau.") {
        "gau"
    } else if name.contains(".attention.") {
        "channel_attention"
    } else if name.contains(".norm") {
        "layer_norm"
    } else if name.contains(".scan") {
        "s6"
    } else if name.contains("_proj.") {
        "linear"
    } else {
        "conv"
    }
}

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub config: ModelConfig,
    pub seed: u64,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    /// Entries checked per parameter tensor; `None` checks every entry.
    pub samples_per_tensor: Option<usize>,
    /// Corrupts the backward rule of one op kind (mutation testing).
    pub fault: Option<OpKind>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            config: ModelConfig::tiny(),
            seed: 0,
            batch: 1,
            height: 8,
            width: 8,
            samples_per_tensor: None,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupReport {
    pub group: &'static str,
    pub tensors: usize,
    pub checked: usize,
    pub max_error: f64,
    /// `name[index]` of the worst entry.
    pub worst: String,
}

impl GroupReport {
    pub fn passed(&self) -> bool {
        self.max_error < TOLERANCE
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub groups: Vec<GroupReport>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(GroupReport::passed)
    }

    pub fn offenders(&self) -> impl Iterator<Item = &GroupReport> {
        self.groups.iter().filter(|g| !g.passed())
    }
}

/// Entries of each parameter that will be perturbed.
fn entries(opts: &GradcheckOptions, model: &FgMamba<f64>) -> Vec<(String, usize)> {
    let mut out = Vec::new();
    for (i, (name, t)) in model.params().iter().enumerate() {
        match opts.samples_per_tensor {
            Some(n) if n < t.len() => {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(i as u64));
                let mut picked = sample(&mut rng, t.len(), n).into_vec();
                picked.sort_unstable();
                out.extend(picked.into_iter().map(|k| (name.clone(), k)));
            }
            _ => out.extend((0..t.len()).map(|k| (name.clone(), k))),
        }
    }
    out
}

/// The check matrix: (group, parameter names, entries to check).
pub fn plan(opts: &GradcheckOptions) -> Result<Vec<(&'static str, Vec<String>, usize)>> {
    let model = FgMamba::<f64>::new(opts.config, opts.seed)?;
    let picked = entries(opts, &model);
    Ok(GROUPS
        .iter()
        .map(|&g| {
            let names: Vec<String> = model
                .params()
                .names()
                .filter(|n| group_of(n) == g)
                .map(String::from)
                .collect();
            let count = picked.iter().filter(|(n, _)| group_of(n) == g).count();
            (g, names, count)
        })
        .filter(|(_, names, _)| !names.is_empty())
        .collect())
}

pub fn run(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let model = FgMamba::<f64>::new(opts.config, opts.seed)?;
    let shape = [opts.batch, opts.config.in_channels, opts.height, opts.width];
    let input = random_tensor::<f64>(&shape, opts.seed ^ 0x1357, 0.5).map(|v| v + 0.5);
    let out_shape = [
        opts.batch,
        opts.config.in_channels,
        opts.height * opts.config.scale,
        opts.width * opts.config.scale,
    ];
    let projection: Tensor<f64> = random_tensor(&out_shape, opts.seed ^ 0x2468, 1.0);

    let objective = |m: &FgMamba<f64>| -> Result<f64> {
        let y = m.infer(&input)?;
        Ok(y.data().iter().zip(projection.data()).map(|(a, b)| a * b).sum())
    };

    let mut tape = Tape::new();
    if let Some(kind) = opts.fault {
        tape.inject_fault(kind);
    }
    let x = tape.constant(input.clone());
    let (bindings, y) = model.forward(&mut tape, x)?;
    let proj = tape.constant(projection.clone());
    let prod = tape.mul(y, proj)?;
    let loss = tape.sum(prod);
    tape.backward(loss)?;
    let analytic = bindings.gradients(&tape);

    let checks = entries(opts, &model);
    let errors: Vec<f64> = checks
        .par_iter()
        .map(|(name, k)| -> Result<f64> {
            let mut m = model.clone();
            let base = m.params().get(name).expect("declared").data()[*k];
            m.params_mut().get_mut(name).expect("declared").data_mut()[*k] = base + STEP;
            let plus = objective(&m)?;
            m.params_mut().get_mut(name).expect("declared").data_mut()[*k] = base - STEP;
            let minus = objective(&m)?;
            let numeric = (plus - minus) / (2.0 * STEP);
            let exact = analytic.get(name).map_or(0.0, |g| g[*k]);
            Ok(relative_error(exact, numeric))
        })
        .collect::<Result<_>>()?;

    let groups = GROUPS
        .iter()
        .filter_map(|&g| {
            let tensors = model.params().names().filter(|n| group_of(n) == g).count();
            if tensors == 0 {
                return None;
            }
            let mut report = GroupReport {
                group: g,
                tensors,
                checked: 0,
                max_error: 0.0,
                worst: String::new(),
            };
            for ((name, k), &e) in checks.iter().zip(&errors) {
                if group_of(name) != g {
                    continue;
                }
                report.checked += 1;
                if e > report.max_error || report.worst.is_empty() {
                    report.max_error = e.max(report.max_error);
                    report.worst = format!("{name}[{k}]");
                }
            }
            Some(report)
        })
        .collect();
    Ok(GradcheckReport { groups })
}
