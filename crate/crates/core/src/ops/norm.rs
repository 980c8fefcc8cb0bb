use rayon::prelude::*;

use crate::autodiff::{BackwardRule, OpKind, Tape, Var};
use crate::real::Real;
use crate::tensor::{Result, Tensor, TensorError};

/// Default epsilon for channel-wise layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-6;

struct LayerNormRule {
    channels: usize,
    plane: usize,
    /// Normalized input, same layout as the input.
    xhat: Vec<f64>,
    /// 1/sqrt(var + eps) per (batch, pixel).
    rstd: Vec<f64>,
}

impl<T: Real> BackwardRule<T> for LayerNormRule {
    fn kind(&self) -> OpKind {
        OpKind::LayerNorm
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, gy: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let gain = inputs[1].data();
        let (c, p) = (self.channels, self.plane);
        let batch = gy.len() / (c * p);
        let gx = needs[0].then(|| {
            let mut gx = vec![T::zero(); gy.len()];
            gx.par_chunks_mut(c * p).enumerate().for_each(|(b, dst)| {
                let base = b * c * p;
                for px in 0..p {
                    let (mut m1, mut m2) = (0.0, 0.0);
                    for ch in 0..c {
                        let k = base + ch * p + px;
                        let gh = gy[k].as_f64() * gain[ch].as_f64();
                        m1 += gh;
                        m2 += gh * self.xhat[k];
                    }
                    m1 /= c as f64;
                    m2 /= c as f64;
                    let r = self.rstd[b * p + px];
                    for ch in 0..c {
                        let k = base + ch * p + px;
                        let gh = gy[k].as_f64() * gain[ch].as_f64();
                        dst[ch * p + px] = T::of(r * (gh - m1 - self.xhat[k] * m2));
                    }
                }
            });
            gx
        });
        let reduce = |f: &dyn Fn(usize) -> f64| -> Vec<T> {
            (0..c)
                .map(|ch| {
                    let mut acc = 0.0;
                    for b in 0..batch {
                        for px in 0..p {
                            acc += f((b * c + ch) * p + px);
                        }
                    }
                    T::of(acc)
                })
                .collect()
        };
        let gg = needs[1].then(|| reduce(&|k| gy[k].as_f64() * self.xhat[k]));
        let gb = needs[2].then(|| reduce(&|k| gy[k].as_f64()));
        vec![gx, gg, gb]
    }
}

impl<T: Real> Tape<T> {
    /// Normalizes each pixel's channel vector to zero mean and unit variance,
    /// then applies a per-channel affine map.
    pub fn layer_norm(&mut self, input: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 || !eps.is_finite() {
            return Err(TensorError::InvalidArgument {
                op: "layer_norm",
                what: format!("eps must be positive, got {eps}"),
            });
        }
        let (b, c, h, w) = self.value(input).dims4("layer_norm")?;
        for v in [gain, bias] {
            if self.shape(v) != [c] {
                return Err(TensorError::ChannelMismatch {
                    op: "layer_norm",
                    expected: c,
                    actual: self.shape(v).iter().product(),
                });
            }
        }
        let p = h * w;
        let x = self.data(input);
        let (g, bi) = (self.data(gain), self.data(bias));
        let mut xhat = vec![0.0; x.len()];
        let mut rstd = vec![0.0; b * p];
        let mut out = vec![T::zero(); x.len()];
        xhat.par_chunks_mut(c * p)
            .zip(rstd.par_chunks_mut(p))
            .zip(out.par_chunks_mut(c * p))
            .enumerate()
            .for_each(|(n, ((xh, rs), dst))| {
                let src = &x[n * c * p..][..c * p];
                for px in 0..p {
                    let mean = (0..c).map(|ch| src[ch * p + px].as_f64()).sum::<f64>() / c as f64;
                    let var = (0..c)
                        .map(|ch| {
                            let d = src[ch * p + px].as_f64() - mean;
                            d * d
                        })
                        .sum::<f64>()
                        / c as f64;
                    let r = 1.0 / (var + eps).sqrt();
                    rs[px] = r;
                    for ch in 0..c {
                        let k = ch * p + px;
                        let v = (src[k].as_f64() - mean) * r;
                        xh[k] = v;
                        dst[k] = T::of(v * g[ch].as_f64() + bi[ch].as_f64());
                    }
                }
            });
        let out = Tensor::new(vec![b, c, h, w], out)?;
        Ok(self.push(
            out,
            vec![input, gain, bias],
            Box::new(LayerNormRule {
                channels: c,
                plane: p,
                xhat,
                rstd,
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{assert_all_close, check_gradients, random_tensor};

    fn run(x: Tensor<f64>) -> Vec<f64> {
        let c = x.shape()[1];
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let g = tape.constant(Tensor::full(vec![c], 1.0));
        let b = tape.constant(Tensor::zeros(vec![c]));
        let y = tape.layer_norm(xv, g, b, LAYER_NORM_EPS).unwrap();
        tape.data(y).to_vec()
    }

    #[test]
    fn constant_input_normalizes_to_zero() {
        let y = run(Tensor::full(vec![1, 4, 3, 3], 2.5));
        assert!(y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn already_normalized_pair_is_kept() {
        let y = run(Tensor::new(vec![1, 2, 1, 1], vec![1.0, -1.0]).unwrap());
        let k = 1.0 / (1.0f64 + 1e-6).sqrt();
        assert_eq!(y, vec![k, -k]);
        assert!((y[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn matches_per_pixel_statistics_oracle() {
        let x = random_tensor(&[2, 5, 3, 4], 3, 2.0);
        let g = random_tensor(&[5], 4, 1.0);
        let bb = random_tensor(&[5], 5, 1.0);
        let mut tape = Tape::new();
        let (xv, gv, bv) = (
            tape.constant(x.clone()),
            tape.constant(g.clone()),
            tape.constant(bb.clone()),
        );
        let y = tape.layer_norm(xv, gv, bv, 1e-6).unwrap();
        let mut expect = vec![0.0; x.len()];
        for n in 0..2 {
            for px in 0..12 {
                let vals: Vec<f64> = (0..5).map(|c| x.data()[(n * 5 + c) * 12 + px]).collect();
                let mean = vals.iter().sum::<f64>() / 5.0;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0;
                for c in 0..5 {
                    expect[(n * 5 + c) * 12 + px] = (vals[c] - mean) / (var + 1e-6).sqrt() * g.data()[c] + bb.data()[c];
                }
            }
        }
        assert_all_close(tape.data(y), &expect, 1e-9);
    }

    #[test]
    fn rejects_non_positive_eps() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(vec![1, 2, 1, 1]));
        let g = tape.constant(Tensor::zeros(vec![2]));
        let b = tape.constant(Tensor::zeros(vec![2]));
        assert!(tape.layer_norm(x, g, b, 0.0).is_err());
        assert!(tape.layer_norm(x, g, b, -1.0).is_err());
    }

    #[test]
    fn gradients() {
        let x = random_tensor(&[2, 4, 3, 3], 6, 1.0);
        let g = random_tensor(&[4], 7, 1.0);
        let b = random_tensor(&[4], 8, 1.0);
        check_gradients(&[x, g, b], 1e-4, |t, v| t.layer_norm(v[0], v[1], v[2], 1e-6));
    }
}
