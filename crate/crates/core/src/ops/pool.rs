use crate::autodiff::{BackwardRule, OpKind, Tape, Var};
use crate::ops::reflect_index;
use crate::real::Real;
use crate::tensor::{Result, Tensor, TensorError};

struct AvgPoolRule {
    k: usize,
    dims: (usize, usize, usize, usize),
}

fn pooled_extent(n: usize, k: usize) -> usize {
    n.div_ceil(k)
}

impl<T: Real> BackwardRule<T> for AvgPoolRule {
    fn kind(&self) -> OpKind {
        OpKind::AvgPool2d
    }

    fn backward(&self, _inputs: &[&Tensor<T>], _output: &Tensor<T>, gy: &[T], _needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let (b, c, h, w) = self.dims;
        let k = self.k;
        let (oh, ow) = (pooled_extent(h, k), pooled_extent(w, k));
        let inv = T::of(1.0 / (k * k) as f64);
        let mut gx = vec![T::zero(); b * c * h * w];
        for plane in 0..b * c {
            let src = &gy[plane * oh * ow..][..oh * ow];
            let dst = &mut gx[plane * h * w..][..h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = src[oy * ow + ox] * inv;
                    for dy in 0..k {
                        let iy = reflect_index((oy * k + dy) as isize, h);
                        for dx in 0..k {
                            let ix = reflect_index((ox * k + dx) as isize, w);
                            dst[iy * w + ix] += g;
                        }
                    }
                }
            }
        }
        vec![Some(gx)]
    }
}

struct GlobalAvgRule {
    plane: usize,
}

impl<T: Real> BackwardRule<T> for GlobalAvgRule {
    fn kind(&self) -> OpKind {
        OpKind::GlobalAvgPool
    }

    fn backward(&self, _inputs: &[&Tensor<T>], _output: &Tensor<T>, gy: &[T], _needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let inv = T::of(1.0 / self.plane as f64);
        let gx = gy
            .iter()
            .flat_map(|&g| std::iter::repeat_n(g * inv, self.plane))
            .collect();
        vec![Some(gx)]
    }
}

struct ChannelReduceRule {
    channels: usize,
    plane: usize,
    /// Winning channel per (batch, pixel) for max; `None` for mean.
    argmax: Option<Vec<usize>>,
}

impl<T: Real> BackwardRule<T> for ChannelReduceRule {
    fn kind(&self) -> OpKind {
        if self.argmax.is_some() {
            OpKind::ChannelMax
        } else {
            OpKind::ChannelMean
        }
    }

    fn backward(&self, _inputs: &[&Tensor<T>], _output: &Tensor<T>, gy: &[T], _needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let (c, p) = (self.channels, self.plane);
        let batch = gy.len() / p;
        let mut gx = vec![T::zero(); batch * c * p];
        let inv = T::of(1.0 / c as f64);
        for b in 0..batch {
            for px in 0..p {
                let g = gy[b * p + px];
                match &self.argmax {
                    Some(arg) => gx[(b * c + arg[b * p + px]) * p + px] += g,
                    None => (0..c).for_each(|ch| gx[(b * c + ch) * p + px] += g * inv),
                }
            }
        }
        vec![Some(gx)]
    }
}

impl<T: Real> Tape<T> {
    /// Non-overlapping k×k mean pooling with stride k. Extents that are not
    /// multiples of k are first reflect-padded at the bottom/right edge.
    pub fn avg_pool2d(&mut self, input: Var, k: usize) -> Result<Var> {
        if k < 1 {
            return Err(TensorError::InvalidArgument {
                op: "avg_pool2d",
                what: "kernel must be at least 1".into(),
            });
        }
        let (b, c, h, w) = self.value(input).dims4("avg_pool2d")?;
        let (oh, ow) = (pooled_extent(h, k), pooled_extent(w, k));
        let x = self.data(input);
        let inv = 1.0 / (k * k) as f64;
        let mut out = Vec::with_capacity(b * c * oh * ow);
        for plane in 0..b * c {
            let src = &x[plane * h * w..][..h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for dy in 0..k {
                        let iy = reflect_index((oy * k + dy) as isize, h);
                        for dx in 0..k {
                            let ix = reflect_index((ox * k + dx) as isize, w);
                            acc += src[iy * w + ix].as_f64();
                        }
                    }
                    out.push(T::of(acc * inv));
                }
            }
        }
        let out = Tensor::new(vec![b, c, oh, ow], out)?;
        Ok(self.push(out, vec![input], Box::new(AvgPoolRule { k, dims: (b, c, h, w) })))
    }

    /// Adaptive average pooling to 1×1.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let (b, c, h, w) = self.value(input).dims4("global_avg_pool")?;
        let p = h * w;
        let out: Vec<T> = self
            .data(input)
            .chunks(p)
            .map(|ch| T::of(ch.iter().map(|v| v.as_f64()).sum::<f64>() / p as f64))
            .collect();
        let out = Tensor::new(vec![b, c, 1, 1], out)?;
        Ok(self.push(out, vec![input], Box::new(GlobalAvgRule { plane: p })))
    }

    fn channel_reduce(&mut self, input: Var, max: bool) -> Result<Var> {
        let (b, c, h, w) = self.value(input).dims4("channel_reduce")?;
        let p = h * w;
        let x = self.data(input);
        let mut out = vec![T::zero(); b * p];
        let mut arg = vec![0usize; b * p];
        for n in 0..b {
            for px in 0..p {
                let vals = (0..c).map(|ch| x[(n * c + ch) * p + px]);
                if max {
                    let (best, v) = vals.enumerate().fold(
                        (0, T::neg_infinity()),
                        |acc, (i, v)| if v > acc.1 { (i, v) } else { acc },
                    );
                    out[n * p + px] = v;
                    arg[n * p + px] = best;
                } else {
                    out[n * p + px] = T::of(vals.map(|v| v.as_f64()).sum::<f64>() / c as f64);
                }
            }
        }
        let out = Tensor::new(vec![b, 1, h, w], out)?;
        Ok(self.push(
            out,
            vec![input],
            Box::new(ChannelReduceRule {
                channels: c,
                plane: p,
                argmax: max.then_some(arg),
            }),
        ))
    }

    /// Per-pixel mean across channels: (B,C,H,W) → (B,1,H,W).
    pub fn channel_mean(&mut self, input: Var) -> Result<Var> {
        self.channel_reduce(input, false)
    }

    /// Per-pixel max across channels: (B,C,H,W) → (B,1,H,W).
    pub fn channel_max(&mut self, input: Var) -> Result<Var> {
        self.channel_reduce(input, true)
    }
}
