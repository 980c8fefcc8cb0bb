//! Named parameter storage, deterministic initialization and binding onto a tape.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{numel, Tensor};

/// How a parameter is filled at construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// U(-1/√fan_in, 1/√fan_in)
    FanIn(usize),
    Const(f64),
    /// Row-wise ln(1), ln(2), …, ln(N) so that A = −exp(a_log) = −(1..N).
    StateLog,
    /// softplus⁻¹(dt) with dt log-uniform in [1e-3, 1e-1].
    StepBias,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamDecl {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// Collects declarations under a dotted name prefix.
#[derive(Debug, Default)]
pub struct Declarations {
    decls: Vec<ParamDecl>,
}

impl Declarations {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: impl Into<Vec<usize>>, init: Init) {
        self.decls.push(ParamDecl {
            name: name.into(),
            shape: shape.into(),
            init,
        });
    }

    pub fn into_vec(self) -> Vec<ParamDecl> {
        self.decls
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamDecl> {
        self.decls.iter()
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Per-parameter generator seeded from (seed, name), so a parameter's initial
/// value does not depend on which other parameters exist.
fn rng_for(seed: u64, name: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

fn initial_values(decl: &ParamDecl, seed: u64) -> Vec<f64> {
    let n = numel(&decl.shape);
    let mut rng = rng_for(seed, &decl.name);
    match decl.init {
        Init::FanIn(fan_in) => {
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
        }
        Init::Const(v) => vec![v; n],
        Init::StateLog => {
            let states = *decl.shape.last().unwrap_or(&1);
            (0..n).map(|i| ((i % states + 1) as f64).ln()).collect()
        }
        Init::StepBias => (0..n)
            .map(|_| {
                let dt = rng.gen_range(1e-3f64.ln()..1e-1f64.ln()).exp();
                // softplus⁻¹(dt) = ln(e^dt − 1)
                dt + (-(-dt).exp_m1()).ln()
            })
            .collect(),
    }
}

/// Ordered map from parameter name to value.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            tensors: BTreeMap::new(),
        }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn initialize(decls: &[ParamDecl], seed: u64) -> Self {
        let tensors = decls
            .iter()
            .map(|d| {
                let data = initial_values(d, seed).into_iter().map(T::of).collect();
                let t = Tensor::new(d.shape.clone(), data).expect("declared shape");
                (d.name.clone(), t)
            })
            .collect();
        Self { tensors }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of learnable scalars.
    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Checks that the store holds exactly the declared names and shapes.
    pub fn validate(&self, decls: &[ParamDecl]) -> Result<()> {
        for d in decls {
            let t = self
                .get(&d.name)
                .ok_or_else(|| Error::MissingParameter(d.name.clone()))?;
            if t.shape() != d.shape.as_slice() {
                return Err(Error::ParameterShape {
                    name: d.name.clone(),
                    expected: d.shape.clone(),
                    actual: t.shape().to_vec(),
                });
            }
        }
        if self.len() != decls.len() {
            let declared: std::collections::HashSet<&str> = decls.iter().map(|d| d.name.as_str()).collect();
            let extra = self.names().find(|n| !declared.contains(n)).unwrap_or_default();
            return Err(Error::InvalidConfig(format!("unexpected parameter `{extra}`")));
        }
        Ok(())
    }
}

/// Parameter handles recorded on one tape.
#[derive(Debug, Clone, Default)]
pub struct Bindings {
    vars: HashMap<String, Var>,
}

impl Bindings {
    pub fn bind<T: Real>(tape: &mut Tape<T>, store: &ParamStore<T>) -> Self {
        let vars = store
            .iter()
            .map(|(name, t)| (name.clone(), tape.param(t.clone())))
            .collect();
        Self { vars }
    }

    pub fn insert(&mut self, name: impl Into<String>, var: Var) {
        self.vars.insert(name.into(), var);
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    /// Gradient of every bound parameter after `backward`.
    pub fn gradients<T: Real>(&self, tape: &Tape<T>) -> BTreeMap<String, Vec<T>> {
        self.vars
            .iter()
            .filter_map(|(k, v)| tape.grad(*v).map(|g| (k.clone(), g.to_vec())))
            .collect()
    }
}

/// Name-scoped view of the bindings.
#[derive(Clone, Copy)]
pub struct Scope<'a> {
    bindings: &'a Bindings,
    prefix: &'a str,
}

impl<'a> Scope<'a> {
    pub fn new(bindings: &'a Bindings, prefix: &'a str) -> Self {
        Self { bindings, prefix }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.bindings.get(&join(self.prefix, name))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decls() -> Vec<ParamDecl> {
        let mut d = Declarations::new();
        d.add("a.weight", vec![3, 4], Init::FanIn(4));
        d.add("a.bias", vec![3], Init::Const(0.0));
        d.add("s.a_log", vec![2, 4], Init::StateLog);
        d.add("s.dt", vec![5], Init::StepBias);
        d.into_vec()
    }

    #[test]
    fn initialization_is_per_name_and_seeded() {
        let all = decls();
        let full = ParamStore::<f64>::initialize(&all, 3);
        let partial = ParamStore::<f64>::initialize(&all[..1], 3);
        assert_eq!(full.get("a.weight"), partial.get("a.weight"));
        assert_eq!(full, ParamStore::initialize(&all, 3));
        assert_ne!(
            full.get("a.weight"),
            ParamStore::<f64>::initialize(&all, 4).get("a.weight")
        );
        let w = full.get("a.weight").unwrap();
        assert!(w.data().iter().all(|v| v.abs() < 0.5));
    }

    #[test]
    fn special_initializers() {
        let store = ParamStore::<f64>::initialize(&decls(), 0);
        let a = store.get("s.a_log").unwrap().data();
        assert_eq!(a[0], 0.0);
        assert!((a[3] - 4f64.ln()).abs() < 1e-15);
        for &b in store.get("s.dt").unwrap().data() {
            let dt = crate::ops::softplus(b);
            assert!((1e-3..=1e-1).contains(&dt), "{dt}");
        }
    }

    #[test]
    fn validate_catches_missing_and_extra() {
        let all = decls();
        let mut store = ParamStore::<f32>::initialize(&all, 1);
        assert!(store.validate(&all).is_ok());
        assert!(matches!(store.validate(&all[1..]), Err(Error::InvalidConfig(_))));
        store.insert("a.bias", Tensor::zeros(vec![4]));
        assert!(matches!(store.validate(&all), Err(Error::ParameterShape { .. })));
    }
}
