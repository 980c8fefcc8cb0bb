use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam with moments kept in double precision.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: BTreeMap<String, (Tensor<f64>, Tensor<f64>)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// First and second moment buffers of a parameter.
    pub fn moments(&self, name: &str) -> Option<(&Tensor<f64>, &Tensor<f64>)> {
        self.moments.get(name).map(|(m, v)| (m, v))
    }

    /// Updates every parameter in `params`; each must have a gradient.
    pub fn step<T: Real>(&mut self, params: &mut ParamStore<T>, grads: &BTreeMap<String, Vec<T>>) -> Result<()> {
        for name in params.names() {
            if !grads.contains_key(name) {
                return Err(Error::MissingGradient(name.to_string()));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (name, p) in params.iter_mut() {
            let g = &grads[name];
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (Tensor::zeros(p.shape().to_vec()), Tensor::zeros(p.shape().to_vec())));
            let pd = p.data_mut();
            for (((x, &gi), mi), vi) in pd.iter_mut().zip(g).zip(m.data_mut()).zip(v.data_mut()) {
                let gi = gi.as_f64();
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let update = lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
                *x = T::of(x.as_f64() - update);
            }
        }
        Ok(())
    }
}
