use crate::autodiff::{BackwardRule, OpKind, Tape, Var};
use crate::real::Real;
use crate::tensor::{Result, Tensor, TensorError};

/// Pure data movement: `index[k]` is the input element copied to output `k`.
/// Backward scatters (and accumulates) along the same map.
struct Gather {
    kind: OpKind,
    index: Vec<usize>,
    input_len: usize,
}

impl<T: Real> BackwardRule<T> for Gather {
    fn kind(&self) -> OpKind {
        self.kind
    }

    fn backward(&self, _inputs: &[&Tensor<T>], _output: &Tensor<T>, gy: &[T], _needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let mut gx = vec![T::zero(); self.input_len];
        for (&i, &g) in self.index.iter().zip(gy) {
            gx[i] += g;
        }
        vec![Some(gx)]
    }
}

struct ConcatRule {
    /// (channels, plane) per input, in order.
    parts: Vec<usize>,
    plane: usize,
    batch: usize,
}

impl<T: Real> BackwardRule<T> for ConcatRule {
    fn kind(&self) -> OpKind {
        OpKind::Concat
    }

    fn backward(&self, _inputs: &[&Tensor<T>], _output: &Tensor<T>, gy: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let total: usize = self.parts.iter().sum();
        let mut offset = 0;
        let mut grads = Vec::with_capacity(self.parts.len());
        for (&c, &need) in self.parts.iter().zip(needs) {
            if need {
                let mut g = Vec::with_capacity(self.batch * c * self.plane);
                for b in 0..self.batch {
                    let start = (b * total + offset) * self.plane;
                    g.extend_from_slice(&gy[start..start + c * self.plane]);
                }
                grads.push(Some(g));
            } else {
                grads.push(None);
            }
            offset += c;
        }
        grads
    }
}

impl<T: Real> Tape<T> {
    fn gather(&mut self, input: Var, kind: OpKind, shape: Vec<usize>, index: Vec<usize>) -> Result<Var> {
        let x = self.data(input);
        let out = Tensor::new(shape, index.iter().map(|&i| x[i]).collect())?;
        let input_len = x.len();
        Ok(self.push(out, vec![input], Box::new(Gather { kind, index, input_len })))
    }

    /// Concatenates rank-4 tensors along the channel axis.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = self.value(inputs[0]).dims4("concat")?;
        let mut parts = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let (b, c, h, w) = self.value(v).dims4("concat")?;
            if (b, h, w) != (first.0, first.2, first.3) {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: self.shape(inputs[0]).to_vec(),
                    rhs: self.shape(v).to_vec(),
                });
            }
            parts.push(c);
        }
        let (batch, plane) = (first.0, first.2 * first.3);
        let total: usize = parts.iter().sum();
        let mut out = Vec::with_capacity(batch * total * plane);
        for b in 0..batch {
            for (&v, &c) in inputs.iter().zip(&parts) {
                out.extend_from_slice(&self.data(v)[b * c * plane..][..c * plane]);
            }
        }
        let out = Tensor::new(vec![batch, total, first.2, first.3], out)?;
        Ok(self.push(out, inputs.to_vec(), Box::new(ConcatRule { parts, plane, batch })))
    }

    /// Sub-pixel rearrangement (B, C·r², H, W) → (B, C, H·r, W·r).
    pub fn pixel_shuffle(&mut self, input: Var, r: usize) -> Result<Var> {
        let (b, cr, h, w) = self.value(input).dims4("pixel_shuffle")?;
        if r == 0 || cr % (r * r) != 0 {
            return Err(TensorError::InvalidArgument {
                op: "pixel_shuffle",
                what: format!("{cr} channels not divisible by r²={}", r * r),
            });
        }
        let c = cr / (r * r);
        let (oh, ow) = (h * r, w * r);
        let mut index = Vec::with_capacity(b * cr * h * w);
        for n in 0..b {
            for ch in 0..c {
                for y in 0..oh {
                    for x in 0..ow {
                        let src_c = ch * r * r + (y % r) * r + (x % r);
                        index.push(((n * cr + src_c) * h + y / r) * w + x / r);
                    }
                }
            }
        }
        self.gather(input, OpKind::PixelShuffle, vec![b, c, oh, ow], index)
    }

    /// Replicates every pixel into an r×r block.
    pub fn upsample_nearest(&mut self, input: Var, r: usize) -> Result<Var> {
        if r == 0 {
            return Err(TensorError::InvalidArgument {
                op: "upsample_nearest",
                what: "factor must be at least 1".into(),
            });
        }
        let (b, c, h, w) = self.value(input).dims4("upsample_nearest")?;
        let (oh, ow) = (h * r, w * r);
        let mut index = Vec::with_capacity(b * c * oh * ow);
        for plane in 0..b * c {
            for y in 0..oh {
                for x in 0..ow {
                    index.push((plane * h + y / r) * w + x / r);
                }
            }
        }
        self.gather(input, OpKind::UpsampleNearest, vec![b, c, oh, ow], index)
    }

    /// Keeps the top-left `h × w` window of every plane.
    pub fn crop(&mut self, input: Var, h: usize, w: usize) -> Result<Var> {
        let (b, c, ih, iw) = self.value(input).dims4("crop")?;
        if h > ih || w > iw {
            return Err(TensorError::InvalidArgument {
                op: "crop",
                what: format!("window {h}x{w} exceeds {ih}x{iw}"),
            });
        }
        let mut index = Vec::with_capacity(b * c * h * w);
        for plane in 0..b * c {
            for y in 0..h {
                for x in 0..w {
                    index.push((plane * ih + y) * iw + x);
                }
            }
        }
        self.gather(input, OpKind::Crop, vec![b, c, h, w], index)
    }
}
