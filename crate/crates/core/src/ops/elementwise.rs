use crate::autodiff::{BackwardRule, OpKind, Tape, Var};
use crate::real::Real;
use crate::tensor::{numel, Result, Tensor, TensorError};

/// Right-aligned broadcast of two shapes. Returns the output shape and, for
/// every output element, the flat index into each operand.
struct Broadcast {
    shape: Vec<usize>,
    lhs_index: Vec<usize>,
    rhs_index: Vec<usize>,
}

fn broadcast(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<Option<Broadcast>> {
    if lhs == rhs {
        return Ok(None);
    }
    let rank = lhs.len().max(rhs.len());
    let pad = |s: &[usize]| {
        let mut v = vec![1; rank - s.len()];
        v.extend_from_slice(s);
        v
    };
    let (l, r) = (pad(lhs), pad(rhs));
    let mut shape = Vec::with_capacity(rank);
    for (&a, &b) in l.iter().zip(&r) {
        shape.push(match (a, b) {
            (a, b) if a == b => a,
            (1, b) => b,
            (a, 1) => a,
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op,
                    lhs: lhs.to_vec(),
                    rhs: rhs.to_vec(),
                })
            }
        });
    }
    let strides = |s: &[usize]| {
        let mut st = vec![0; rank];
        let mut acc = 1;
        for d in (0..rank).rev() {
            st[d] = if s[d] == 1 { 0 } else { acc };
            acc *= s[d];
        }
        st
    };
    let (ls, rs) = (strides(&l), strides(&r));
    let n = numel(&shape);
    let mut lhs_index = Vec::with_capacity(n);
    let mut rhs_index = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let (mut li, mut ri) = (0usize, 0usize);
    for _ in 0..n {
        lhs_index.push(li);
        rhs_index.push(ri);
        for d in (0..rank).rev() {
            idx[d] += 1;
            li += ls[d];
            ri += rs[d];
            if idx[d] < shape[d] {
                break;
            }
            li -= ls[d] * shape[d];
            ri -= rs[d] * shape[d];
            idx[d] = 0;
        }
    }
    Ok(Some(Broadcast {
        shape,
        lhs_index,
        rhs_index,
    }))
}

#[derive(Clone, Copy)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
}

struct Binary {
    kind: BinaryKind,
    map: Option<Broadcast>,
}

impl<T: Real> BackwardRule<T> for Binary {
    fn kind(&self) -> OpKind {
        match self.kind {
            BinaryKind::Add => OpKind::Add,
            BinaryKind::Sub => OpKind::Sub,
            BinaryKind::Mul => OpKind::Mul,
        }
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let (a, b) = (inputs[0].data(), inputs[1].data());
        let mut ga = needs[0].then(|| vec![T::zero(); a.len()]);
        let mut gb = needs[1].then(|| vec![T::zero(); b.len()]);
        let index = |k: usize| match &self.map {
            Some(m) => (m.lhs_index[k], m.rhs_index[k]),
            None => (k, k),
        };
        for (k, &gk) in g.iter().enumerate() {
            let (i, j) = index(k);
            let (da, db) = match self.kind {
                BinaryKind::Add => (gk, gk),
                BinaryKind::Sub => (gk, -gk),
                BinaryKind::Mul => (gk * b[j], gk * a[i]),
            };
            if let Some(ga) = ga.as_mut() {
                ga[i] += da;
            }
            if let Some(gb) = gb.as_mut() {
                gb[j] += db;
            }
        }
        vec![ga, gb]
    }
}

struct Unary<F> {
    kind: OpKind,
    /// Derivative from (input, output).
    deriv: F,
}

impl<T: Real, F: Fn(T, T) -> T + Send + Sync> BackwardRule<T> for Unary<F> {
    fn kind(&self) -> OpKind {
        self.kind
    }

    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, g: &[T], _needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let gx = inputs[0]
            .data()
            .iter()
            .zip(output.data())
            .zip(g)
            .map(|((&x, &y), &gy)| gy * (self.deriv)(x, y))
            .collect();
        vec![Some(gx)]
    }
}

struct Reduce {
    kind: OpKind,
    scale: f64,
}

impl<T: Real> BackwardRule<T> for Reduce {
    fn kind(&self) -> OpKind {
        self.kind
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, g: &[T], _needs: &[bool]) -> Vec<Option<Vec<T>>> {
        vec![Some(vec![g[0] * T::of(self.scale); inputs[0].len()])]
    }
}

struct Passthrough(OpKind);

impl<T: Real> BackwardRule<T> for Passthrough {
    fn kind(&self) -> OpKind {
        self.0
    }

    fn backward(&self, _inputs: &[&Tensor<T>], _output: &Tensor<T>, g: &[T], _needs: &[bool]) -> Vec<Option<Vec<T>>> {
        vec![Some(g.to_vec())]
    }
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn softplus<T: Real>(x: T) -> T {
    // log(1 + e^x) without overflow for large x
    if x > T::of(20.0) {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

impl<T: Real> Tape<T> {
    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let name = match kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
        };
        let map = broadcast(name, self.shape(a), self.shape(b))?;
        let (x, y) = (self.data(a), self.data(b));
        let f = |p: T, q: T| match kind {
            BinaryKind::Add => p + q,
            BinaryKind::Sub => p - q,
            BinaryKind::Mul => p * q,
        };
        let (shape, data) = match &map {
            None => (
                self.shape(a).to_vec(),
                x.iter().zip(y).map(|(&p, &q)| f(p, q)).collect(),
            ),
            Some(m) => (
                m.shape.clone(),
                m.lhs_index
                    .iter()
                    .zip(&m.rhs_index)
                    .map(|(&i, &j)| f(x[i], y[j]))
                    .collect(),
            ),
        };
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, vec![a, b], Box::new(Binary { kind, map })))
    }

    /// Elementwise sum with right-aligned broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    /// Elementwise product with right-aligned broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    fn unary<F>(&mut self, x: Var, kind: OpKind, f: impl Fn(T) -> T, deriv: F) -> Var
    where
        F: Fn(T, T) -> T + Send + Sync + 'static,
    {
        let out = self.value(x).map(f);
        self.push(out, vec![x], Box::new(Unary { kind, deriv }))
    }

    /// Multiplies by a fixed constant.
    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let k = T::of(c);
        self.unary(x, OpKind::Scale, move |v| v * k, move |_, _| k)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let k = T::of(c);
        self.unary(x, OpKind::AddScalar, move |v| v + k, |_, _| T::one())
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, OpKind::Sigmoid, sigmoid, |_, y| y * (T::one() - y))
    }

    /// x · σ(x)
    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(
            x,
            OpKind::Silu,
            |v| v * sigmoid(v),
            |v, _| {
                let s = sigmoid(v);
                s * (T::one() + v * (T::one() - s))
            },
        )
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, OpKind::Softplus, softplus, |v, _| sigmoid(v))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, OpKind::Exp, |v| v.exp(), |_, y| y)
    }

    /// Sum of all elements as a shape-`[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.data(x).iter().copied().sum();
        self.push(
            Tensor::scalar(s),
            vec![x],
            Box::new(Reduce {
                kind: OpKind::Sum,
                scale: 1.0,
            }),
        )
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        let s: T = self.data(x).iter().copied().sum();
        self.push(
            Tensor::scalar(s / T::of(n as f64)),
            vec![x],
            Box::new(Reduce {
                kind: OpKind::Mean,
                scale: 1.0 / n as f64,
            }),
        )
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(x).reshaped(shape)?;
        Ok(self.push(out, vec![x], Box::new(Passthrough(OpKind::Reshape))))
    }
}
