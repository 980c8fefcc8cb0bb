use rayon::prelude::*;

use crate::autodiff::{BackwardRule, OpKind, Tape, Var};
use crate::real::Real;
use crate::tensor::{Result, Tensor, TensorError};

/// Geometry of a 2-D cross-correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub const fn same(kernel: usize) -> Self {
        Self {
            stride: 1,
            padding: kernel / 2,
            groups: 1,
        }
    }

    pub const fn grouped(kernel: usize, groups: usize) -> Self {
        Self {
            stride: 1,
            padding: kernel / 2,
            groups,
        }
    }
}

/// Weight (out × in/groups × kh × kw), optional bias (out) and geometry.
#[derive(Debug, Clone, Copy)]
pub struct ConvParams {
    pub weight: Var,
    pub bias: Option<Var>,
    pub spec: ConvSpec,
}

#[derive(Clone, Copy)]
struct Geometry {
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
    groups: usize,
}

impl Geometry {
    fn in_per_group(&self) -> usize {
        self.c_in / self.groups
    }
    fn out_per_group(&self) -> usize {
        self.c_out / self.groups
    }

    /// Output columns whose input column `ox * stride + kx - pad` is in range.
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        valid_range(self.ow, self.w, self.stride, kx, self.pad)
    }

    fn valid_rows(&self, ky: usize) -> (usize, usize) {
        valid_range(self.oh, self.h, self.stride, ky, self.pad)
    }
}

fn valid_range(out_len: usize, in_len: usize, stride: usize, k: usize, pad: usize) -> (usize, usize) {
    // smallest o with o*stride + k >= pad
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    // largest o with o*stride + k - pad < in_len
    let limit = in_len + pad;
    let hi = if k >= limit {
        0
    } else {
        ((limit - k - 1) / stride + 1).min(out_len)
    };
    (lo.min(hi), hi)
}

fn geometry(input: &[usize], weight: &[usize], spec: ConvSpec) -> Result<Geometry> {
    let op = "conv2d";
    let [batch, c_in, h, w] = input[..] else {
        return Err(TensorError::Rank {
            op,
            expected: 4,
            shape: input.to_vec(),
        });
    };
    let [c_out, cig, kh, kw] = weight[..] else {
        return Err(TensorError::Rank {
            op,
            expected: 4,
            shape: weight.to_vec(),
        });
    };
    if spec.groups == 0 || spec.stride == 0 {
        return Err(TensorError::InvalidArgument {
            op,
            what: "stride and groups must be positive".into(),
        });
    }
    if c_out % spec.groups != 0 || c_in % spec.groups != 0 {
        return Err(TensorError::InvalidArgument {
            op,
            what: format!("channels in={c_in} out={c_out} not divisible by groups={}", spec.groups),
        });
    }
    if cig * spec.groups != c_in {
        return Err(TensorError::ChannelMismatch {
            op,
            expected: cig * spec.groups,
            actual: c_in,
        });
    }
    if h == 0 || w == 0 || h + 2 * spec.padding < kh || w + 2 * spec.padding < kw {
        return Err(TensorError::InvalidArgument {
            op,
            what: format!("spatial extent {h}x{w} too small for kernel {kh}x{kw}"),
        });
    }
    Ok(Geometry {
        batch,
        c_in,
        h,
        w,
        c_out,
        kh,
        kw,
        oh: (h + 2 * spec.padding - kh) / spec.stride + 1,
        ow: (w + 2 * spec.padding - kw) / spec.stride + 1,
        stride: spec.stride,
        pad: spec.padding,
        groups: spec.groups,
    })
}

fn conv_forward<T: Real>(g: &Geometry, x: &[T], wt: &[T], bias: Option<&[T]>) -> Vec<T> {
    let plane = g.oh * g.ow;
    let mut out = vec![T::zero(); g.batch * g.c_out * plane];
    let (cig, cog) = (g.in_per_group(), g.out_per_group());
    out.par_chunks_mut(plane).enumerate().for_each(|(bo, dst)| {
        let (b, oc) = (bo / g.c_out, bo % g.c_out);
        if let Some(bias) = bias {
            dst.iter_mut().for_each(|v| *v = bias[oc]);
        }
        let group = oc / cog;
        for icl in 0..cig {
            let ic = group * cig + icl;
            let src = &x[(b * g.c_in + ic) * g.h * g.w..][..g.h * g.w];
            let kern = &wt[(oc * cig + icl) * g.kh * g.kw..][..g.kh * g.kw];
            for ky in 0..g.kh {
                let (r0, r1) = g.valid_rows(ky);
                for kx in 0..g.kw {
                    let wv = kern[ky * g.kw + kx];
                    let (c0, c1) = g.valid_cols(kx);
                    for oy in r0..r1 {
                        let iy = oy * g.stride + ky - g.pad;
                        let row = &src[iy * g.w..][..g.w];
                        let drow = &mut dst[oy * g.ow..][..g.ow];
                        if g.stride == 1 {
                            let off = c0 + kx - g.pad;
                            for (d, s) in drow[c0..c1].iter_mut().zip(&row[off..off + (c1 - c0)]) {
                                *d += wv * *s;
                            }
                        } else {
                            for ox in c0..c1 {
                                drow[ox] += wv * row[ox * g.stride + kx - g.pad];
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

struct Conv2dRule {
    geom: Geometry,
    has_bias: bool,
}

impl<T: Real> BackwardRule<T> for Conv2dRule {
    fn kind(&self) -> OpKind {
        OpKind::Conv2d
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, gy: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let g = &self.geom;
        let (x, wt) = (inputs[0].data(), inputs[1].data());
        let (cig, cog) = (g.in_per_group(), g.out_per_group());
        let plane_in = g.h * g.w;
        let plane_out = g.oh * g.ow;

        let gx = needs[0].then(|| {
            let mut gx = vec![T::zero(); x.len()];
            gx.par_chunks_mut(plane_in).enumerate().for_each(|(bi, dst)| {
                let (b, ic) = (bi / g.c_in, bi % g.c_in);
                let group = ic / cig;
                let icl = ic % cig;
                for ocl in 0..cog {
                    let oc = group * cog + ocl;
                    let src = &gy[(b * g.c_out + oc) * plane_out..][..plane_out];
                    let kern = &wt[(oc * cig + icl) * g.kh * g.kw..][..g.kh * g.kw];
                    for ky in 0..g.kh {
                        let (r0, r1) = g.valid_rows(ky);
                        for kx in 0..g.kw {
                            let wv = kern[ky * g.kw + kx];
                            let (c0, c1) = g.valid_cols(kx);
                            for oy in r0..r1 {
                                let iy = oy * g.stride + ky - g.pad;
                                let grow = &src[oy * g.ow..][..g.ow];
                                let drow = &mut dst[iy * g.w..][..g.w];
                                for ox in c0..c1 {
                                    drow[ox * g.stride + kx - g.pad] += wv * grow[ox];
                                }
                            }
                        }
                    }
                }
            });
            gx
        });

        let gw = needs[1].then(|| {
            let ksz = cig * g.kh * g.kw;
            let mut gw = vec![T::zero(); wt.len()];
            gw.par_chunks_mut(ksz).enumerate().for_each(|(oc, dst)| {
                let group = oc / cog;
                for b in 0..g.batch {
                    let grad = &gy[(b * g.c_out + oc) * plane_out..][..plane_out];
                    for icl in 0..cig {
                        let ic = group * cig + icl;
                        let src = &x[(b * g.c_in + ic) * plane_in..][..plane_in];
                        for ky in 0..g.kh {
                            let (r0, r1) = g.valid_rows(ky);
                            for kx in 0..g.kw {
                                let (c0, c1) = g.valid_cols(kx);
                                let mut acc = T::zero();
                                for oy in r0..r1 {
                                    let iy = oy * g.stride + ky - g.pad;
                                    let row = &src[iy * g.w..][..g.w];
                                    let grow = &grad[oy * g.ow..][..g.ow];
                                    for ox in c0..c1 {
                                        acc += grow[ox] * row[ox * g.stride + kx - g.pad];
                                    }
                                }
                                dst[(icl * g.kh + ky) * g.kw + kx] += acc;
                            }
                        }
                    }
                }
            });
            gw
        });

        let mut grads = vec![gx, gw];
        if self.has_bias {
            let gb = needs[2].then(|| {
                (0..g.c_out)
                    .map(|oc| {
                        (0..g.batch)
                            .map(|b| {
                                gy[(b * g.c_out + oc) * plane_out..][..plane_out]
                                    .iter()
                                    .copied()
                                    .sum::<T>()
                            })
                            .sum()
                    })
                    .collect()
            });
            grads.push(gb);
        }
        grads
    }
}

impl<T: Real> Tape<T> {
    /// Batched 2-D cross-correlation with zero padding, stride and groups.
    pub fn conv2d(&mut self, input: Var, params: &ConvParams) -> Result<Var> {
        let geom = geometry(self.shape(input), self.shape(params.weight), params.spec)?;
        let bias = match params.bias {
            Some(b) => {
                if self.shape(b) != [geom.c_out] {
                    return Err(TensorError::ShapeMismatch {
                        op: "conv2d bias",
                        lhs: vec![geom.c_out],
                        rhs: self.shape(b).to_vec(),
                    });
                }
                Some(self.data(b))
            }
            None => None,
        };
        let out = conv_forward(&geom, self.data(input), self.data(params.weight), bias);
        let out = Tensor::new(vec![geom.batch, geom.c_out, geom.oh, geom.ow], out)?;
        let mut inputs = vec![input, params.weight];
        inputs.extend(params.bias);
        Ok(self.push(
            out,
            inputs,
            Box::new(Conv2dRule {
                geom,
                has_bias: params.bias.is_some(),
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{assert_all_close, check_gradients, max_gradient_error, random_tensor};

    /// Six nested loops over batch, out channel, rows, cols, in channel, taps.
    pub(crate) fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, spec: ConvSpec) -> Vec<f64> {
        let (bn, cin, h, wd) = x.dims4("oracle").unwrap();
        let (cout, cig, kh, kw) = w.dims4("oracle").unwrap();
        let cog = cout / spec.groups;
        let oh = (h + 2 * spec.padding - kh) / spec.stride + 1;
        let ow = (wd + 2 * spec.padding - kw) / spec.stride + 1;
        let mut out = vec![0.0; bn * cout * oh * ow];
        for n in 0..bn {
            for oc in 0..cout {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b.map_or(0.0, |b| b.data()[oc]);
                        for icl in 0..cig {
                            let ic = (oc / cog) * cig + icl;
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
                                    let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += x.data()[((n * cin + ic) * h + iy as usize) * wd + ix as usize]
                                        * w.data()[((oc * cig + icl) * kh + ky) * kw + kx];
                                }
                            }
                        }
                        out[((n * cout + oc) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn run(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, spec: ConvSpec) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let params = ConvParams {
            weight: tape.constant(w.clone()),
            bias: b.map(|b| tape.constant(b.clone())),
            spec,
        };
        let y = tape.conv2d(xv, &params)?;
        Ok(tape.data(y).to_vec())
    }

    #[test]
    fn all_ones_three_by_three_counts_taps() {
        let x = Tensor::full(vec![1, 1, 3, 3], 1.0);
        let w = Tensor::full(vec![1, 1, 3, 3], 1.0);
        let b = Tensor::zeros(vec![1]);
        let y = run(&x, &w, Some(&b), ConvSpec::same(3)).unwrap();
        assert_eq!(y[4], 9.0);
        for corner in [0, 2, 6, 8] {
            assert_eq!(y[corner], 4.0);
        }
        for edge in [1, 3, 5, 7] {
            assert_eq!(y[edge], 6.0);
        }
    }

    #[test]
    fn dirac_kernel_is_identity() {
        let x = random_tensor(&[2, 3, 5, 7], 3, 1.0);
        let w = Tensor::from_fn(vec![3, 1, 3, 3], |i| if i % 9 == 4 { 1.0 } else { 0.0 });
        let y = run(&x, &w, None, ConvSpec::grouped(3, 3)).unwrap();
        assert_eq!(y, x.data());
    }

    #[test]
    fn grouped_conv_matches_nested_loop_oracle() {
        let x = random_tensor(&[2, 4, 8, 8], 1, 1.0);
        let w = random_tensor(&[6, 2, 3, 3], 2, 1.0);
        let b = random_tensor(&[6], 3, 1.0);
        let spec = ConvSpec::grouped(3, 2);
        let y = run(&x, &w, Some(&b), spec).unwrap();
        assert_all_close(&y, &naive_conv(&x, &w, Some(&b), spec), 1e-12);
    }

    #[test]
    fn strided_unpadded_conv_matches_oracle() {
        for (stride, pad, k) in [(2, 0, 3), (2, 1, 3), (3, 2, 5), (1, 0, 1), (2, 3, 2)] {
            let x = random_tensor(&[1, 3, 9, 10], 4, 1.0);
            let w = random_tensor(&[2, 3, k, k], 5, 1.0);
            let spec = ConvSpec {
                stride,
                padding: pad,
                groups: 1,
            };
            let y = run(&x, &w, None, spec).unwrap();
            assert_all_close(&y, &naive_conv(&x, &w, None, spec), 1e-12);
        }
    }

    #[test]
    fn rejects_bad_channels_and_groups() {
        let x = Tensor::zeros(vec![1, 4, 5, 5]);
        let w = Tensor::zeros(vec![3, 2, 3, 3]);
        assert!(matches!(
            run(&x, &w, None, ConvSpec::grouped(3, 2)),
            Err(TensorError::InvalidArgument { .. })
        ));
        let w = Tensor::zeros(vec![2, 3, 3, 3]);
        assert!(matches!(
            run(&x, &w, None, ConvSpec::same(3)),
            Err(TensorError::ChannelMismatch { .. })
        ));
    }

    #[test]
    fn weight_gradient_matches_central_differences_at_1e3() {
        let x = random_tensor(&[2, 4, 6, 6], 7, 1.0);
        let w = random_tensor(&[4, 2, 3, 3], 8, 1.0);
        let b = random_tensor(&[4], 9, 1.0);
        let errs = max_gradient_error(&[x, w, b], 1e-3, &|t: &mut Tape<f64>, v: &[Var]| {
            t.conv2d(
                v[0],
                &ConvParams {
                    weight: v[1],
                    bias: Some(v[2]),
                    spec: ConvSpec::grouped(3, 2),
                },
            )
        });
        assert!(errs.iter().all(|e| *e < 1e-3), "{errs:?}");
    }

    #[test]
    fn strided_gradients() {
        let x = random_tensor(&[1, 2, 7, 6], 17, 1.0);
        let w = random_tensor(&[3, 2, 3, 3], 18, 1.0);
        check_gradients(&[x, w], 1e-3, |t, v| {
            t.conv2d(
                v[0],
                &ConvParams {
                    weight: v[1],
                    bias: None,
                    spec: ConvSpec {
                        stride: 2,
                        padding: 1,
                        groups: 1,
                    },
                },
            )
        });
    }
}
