use rayon::prelude::*;

use crate::autodiff::{BackwardRule, OpKind, Tape, Var};
use crate::real::Real;
use crate::tensor::{Result, Tensor, TensorError};

/// Views an input as (batch, features, positions): rank 2 is (N, F) with one
/// position, rank 4 is (B, C, H·W) mapping over the channel axis.
fn layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape {
        [n, f] => Ok((*n, *f, 1)),
        [b, c, h, w] => Ok((*b, *c, h * w)),
        [b, c, l] => Ok((*b, *c, *l)),
        _ => Err(TensorError::Rank {
            op: "linear",
            expected: 4,
            shape: shape.to_vec(),
        }),
    }
}

struct LinearRule {
    batch: usize,
    fin: usize,
    fout: usize,
    pos: usize,
    has_bias: bool,
}

impl<T: Real> BackwardRule<T> for LinearRule {
    fn kind(&self) -> OpKind {
        OpKind::Linear
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, gy: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let (x, w) = (inputs[0].data(), inputs[1].data());
        let (fin, fout, p) = (self.fin, self.fout, self.pos);
        let gx = needs[0].then(|| {
            let mut gx = vec![T::zero(); x.len()];
            gx.par_chunks_mut(p).enumerate().for_each(|(bi, dst)| {
                let (b, i) = (bi / fin, bi % fin);
                for o in 0..fout {
                    let wv = w[o * fin + i];
                    let src = &gy[(b * fout + o) * p..][..p];
                    dst.iter_mut().zip(src).for_each(|(d, s)| *d += wv * *s);
                }
            });
            gx
        });
        let gw = needs[1].then(|| {
            let mut gw = vec![T::zero(); w.len()];
            gw.par_chunks_mut(fin).enumerate().for_each(|(o, dst)| {
                for b in 0..self.batch {
                    let grow = &gy[(b * fout + o) * p..][..p];
                    for (i, d) in dst.iter_mut().enumerate() {
                        let xrow = &x[(b * fin + i) * p..][..p];
                        *d += grow.iter().zip(xrow).map(|(a, c)| *a * *c).sum::<T>();
                    }
                }
            });
            gw
        });
        let mut grads = vec![gx, gw];
        if self.has_bias {
            grads.push(needs[2].then(|| {
                (0..fout)
                    .map(|o| {
                        (0..self.batch)
                            .map(|b| gy[(b * fout + o) * p..][..p].iter().copied().sum::<T>())
                            .sum()
                    })
                    .collect()
            }));
        }
        grads
    }
}

impl<T: Real> Tape<T> {
    /// Affine map over the feature axis: `weight` is (out, in), `bias` (out).
    /// Rank-4 inputs are mapped independently at every pixel.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (batch, fin, pos) = layout(self.shape(input))?;
        let [fout, win] = self.shape(weight)[..] else {
            return Err(TensorError::Rank {
                op: "linear weight",
                expected: 2,
                shape: self.shape(weight).to_vec(),
            });
        };
        if win != fin {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                lhs: self.shape(input).to_vec(),
                rhs: self.shape(weight).to_vec(),
            });
        }
        if let Some(b) = bias {
            if self.shape(b) != [fout] {
                return Err(TensorError::ShapeMismatch {
                    op: "linear bias",
                    lhs: vec![fout],
                    rhs: self.shape(b).to_vec(),
                });
            }
        }
        let (x, w) = (self.data(input), self.data(weight));
        let bv = bias.map(|b| self.data(b));
        let mut out = vec![T::zero(); batch * fout * pos];
        out.par_chunks_mut(pos).enumerate().for_each(|(bo, dst)| {
            let (b, o) = (bo / fout, bo % fout);
            if let Some(bv) = bv {
                dst.iter_mut().for_each(|d| *d = bv[o]);
            }
            for i in 0..fin {
                let wv = w[o * fin + i];
                let src = &x[(b * fin + i) * pos..][..pos];
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += wv * *s);
            }
        });
        let mut shape = self.shape(input).to_vec();
        shape[1] = fout;
        let out = Tensor::new(shape, out)?;
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        Ok(self.push(
            out,
            inputs,
            Box::new(LinearRule {
                batch,
                fin,
                fout,
                pos,
                has_bias: bias.is_some(),
            }),
        ))
    }
}
