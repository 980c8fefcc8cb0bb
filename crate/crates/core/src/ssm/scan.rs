//! Fused selective-scan primitive with a hand-written reverse recurrence.

use rayon::prelude::*;

use crate::autodiff::{BackwardRule, OpKind, Tape, Var};
use crate::real::Real;
use crate::tensor::{Result, Tensor, TensorError};

/// Order in which a 2-D grid is flattened into a sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScanDirection {
    RowForward,
    RowReverse,
    ColumnForward,
    ColumnReverse,
}

impl ScanDirection {
    pub const ALL: [ScanDirection; 4] = [
        ScanDirection::RowForward,
        ScanDirection::RowReverse,
        ScanDirection::ColumnForward,
        ScanDirection::ColumnReverse,
    ];

    /// Row-major pixel index visited at step `t` of an `h × w` grid.
    pub fn pixel(self, t: usize, h: usize, w: usize) -> usize {
        let len = h * w;
        let column_major = |s: usize| (s % h) * w + s / h;
        match self {
            ScanDirection::RowForward => t,
            ScanDirection::RowReverse => len - 1 - t,
            ScanDirection::ColumnForward => column_major(t),
            ScanDirection::ColumnReverse => column_major(len - 1 - t),
        }
    }

    /// Visit order as a permutation: `order[t]` is the pixel at step `t`.
    pub fn order(self, h: usize, w: usize) -> Vec<usize> {
        (0..h * w).map(|t| self.pixel(t, h, w)).collect()
    }

    /// Inverse permutation: step at which each pixel is visited.
    pub fn inverse_order(self, h: usize, w: usize) -> Vec<usize> {
        let mut inv = vec![0; h * w];
        for (t, p) in self.order(h, w).into_iter().enumerate() {
            inv[p] = t;
        }
        inv
    }
}

#[derive(Clone, Copy)]
struct Dims {
    batch: usize,
    channels: usize,
    states: usize,
    len: usize,
}

struct ScanRule {
    dims: Dims,
    order: Vec<usize>,
}

/// Per-(batch, channel) slices of the scan inputs, widened to f64.
struct Lane<'a, T> {
    u: &'a [T],
    delta: &'a [T],
    bmat: &'a [T],
    cmat: &'a [T],
    /// A = −exp(a_log) for this channel.
    a: Vec<f64>,
    skip: f64,
}

fn lane<'a, T: Real>(inputs: &[&'a [T]; 6], dims: Dims, b: usize, d: usize) -> Lane<'a, T> {
    let Dims {
        channels, states, len, ..
    } = dims;
    let row = (b * channels + d) * len;
    Lane {
        u: &inputs[0][row..row + len],
        delta: &inputs[1][row..row + len],
        bmat: &inputs[3][b * states * len..][..states * len],
        cmat: &inputs[4][b * states * len..][..states * len],
        a: inputs[2][d * states..][..states]
            .iter()
            .map(|v| -v.as_f64().exp())
            .collect(),
        skip: inputs[5][d].as_f64(),
    }
}

/// Runs the recurrence along `order`, writing outputs at the visited pixels.
/// When `history` is given it receives h_t (row `t`) for every step.
fn run_lane<T: Real>(l: &Lane<'_, T>, order: &[usize], out: &mut [f64], mut history: Option<&mut [f64]>) {
    let n = l.a.len();
    let len = order.len();
    let mut h = vec![0.0; n];
    for (t, &p) in order.iter().enumerate() {
        let x = l.u[p].as_f64();
        let dt = l.delta[p].as_f64();
        let mut y = l.skip * x;
        for s in 0..n {
            h[s] = (dt * l.a[s]).exp() * h[s] + dt * l.bmat[s * len + p].as_f64() * x;
            y += l.cmat[s * len + p].as_f64() * h[s];
        }
        out[p] = y;
        if let Some(hist) = history.as_deref_mut() {
            hist[t * n..(t + 1) * n].copy_from_slice(&h);
        }
    }
}

struct LaneGrad {
    gu: Vec<f64>,
    gdelta: Vec<f64>,
    /// dL/dA per state
    ga: Vec<f64>,
    gskip: f64,
    /// state-major, pixel-indexed
    gb: Vec<f64>,
    gc: Vec<f64>,
}

fn lane_backward<T: Real>(l: &Lane<'_, T>, order: &[usize], gy: &[T]) -> LaneGrad {
    let n = l.a.len();
    let len = order.len();
    let mut scratch = vec![0.0; len];
    let mut hist = vec![0.0; len * n];
    run_lane(l, order, &mut scratch, Some(&mut hist));

    let mut g = LaneGrad {
        gu: vec![0.0; len],
        gdelta: vec![0.0; len],
        ga: vec![0.0; n],
        gskip: 0.0,
        gb: vec![0.0; n * len],
        gc: vec![0.0; n * len],
    };
    let mut gh = vec![0.0; n];
    for t in (0..len).rev() {
        let p = order[t];
        let gout = gy[p].as_f64();
        let x = l.u[p].as_f64();
        let dt = l.delta[p].as_f64();
        g.gskip += gout * x;
        let mut gx = gout * l.skip;
        let mut gdt = 0.0;
        for s in 0..n {
            let h_t = hist[t * n + s];
            let h_prev = if t == 0 { 0.0 } else { hist[(t - 1) * n + s] };
            let bv = l.bmat[s * len + p].as_f64();
            let decay = (dt * l.a[s]).exp();
            g.gc[s * len + p] = gout * h_t;
            let gs = gh[s] + gout * l.cmat[s * len + p].as_f64();
            let g_decay = gs * h_prev;
            gdt += g_decay * decay * l.a[s] + gs * bv * x;
            g.ga[s] += g_decay * decay * dt;
            g.gb[s * len + p] = gs * dt * x;
            gx += gs * dt * bv;
            gh[s] = gs * decay;
        }
        g.gu[p] = gx;
        g.gdelta[p] = gdt;
    }
    g
}

impl<T: Real> BackwardRule<T> for ScanRule {
    fn kind(&self) -> OpKind {
        OpKind::SelectiveScan
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, gy: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let dims = self.dims;
        let Dims {
            batch,
            channels,
            states,
            len,
        } = dims;
        let slices: [&[T]; 6] = std::array::from_fn(|i| inputs[i].data());
        let lanes: Vec<LaneGrad> = (0..batch * channels)
            .into_par_iter()
            .map(|k| {
                let (b, d) = (k / channels, k % channels);
                let l = lane(&slices, dims, b, d);
                lane_backward(&l, &self.order, &gy[k * len..][..len])
            })
            .collect();

        let cast = |v: Vec<f64>| v.into_iter().map(T::of).collect::<Vec<T>>();
        let gu = needs[0].then(|| cast(lanes.iter().flat_map(|l| l.gu.iter().copied()).collect()));
        let gdelta = needs[1].then(|| cast(lanes.iter().flat_map(|l| l.gdelta.iter().copied()).collect()));
        let ga_log = needs[2].then(|| {
            let mut g = vec![0.0; channels * states];
            for d in 0..channels {
                for s in 0..states {
                    let a = -slices[2][d * states + s].as_f64().exp();
                    let total: f64 = (0..batch).map(|b| lanes[b * channels + d].ga[s]).sum();
                    // dA/da_log = A
                    g[d * states + s] = total * a;
                }
            }
            cast(g)
        });
        let reduce_states = |pick: fn(&LaneGrad) -> &Vec<f64>| {
            let mut g = vec![0.0; batch * states * len];
            for b in 0..batch {
                let dst = &mut g[b * states * len..][..states * len];
                for d in 0..channels {
                    for (acc, v) in dst.iter_mut().zip(pick(&lanes[b * channels + d])) {
                        *acc += v;
                    }
                }
            }
            cast(g)
        };
        let gb = needs[3].then(|| reduce_states(|l| &l.gb));
        let gc = needs[4].then(|| reduce_states(|l| &l.gc));
        let gskip = needs[5].then(|| {
            cast(
                (0..channels)
                    .map(|d| (0..batch).map(|b| lanes[b * channels + d].gskip).sum())
                    .collect(),
            )
        });
        vec![gu, gdelta, ga_log, gb, gc, gskip]
    }
}

impl<T: Real> Tape<T> {
    /// Selective state-space scan over every (batch, channel) lane.
    ///
    /// Shapes: `u`, `delta` (B,D,H,W); `a_log` (D,N); `bmat`, `cmat` (B,N,H,W);
    /// `skip` (D). `delta` must already be positive. Pixels are visited in the
    /// order given by `direction`; outputs stay at their pixel positions.
    #[allow(clippy::too_many_arguments)]
    pub fn selective_scan(
        &mut self,
        u: Var,
        delta: Var,
        a_log: Var,
        bmat: Var,
        cmat: Var,
        skip: Var,
        direction: ScanDirection,
    ) -> Result<Var> {
        let (batch, channels, h, w) = self.value(u).dims4("selective_scan")?;
        let mismatch = |lhs: &[usize], rhs: &[usize]| TensorError::ShapeMismatch {
            op: "selective_scan",
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        };
        if self.shape(delta) != self.shape(u) {
            return Err(mismatch(self.shape(u), self.shape(delta)));
        }
        let a_shape = self.shape(a_log);
        if a_shape.len() != 2 || a_shape[0] != channels {
            return Err(mismatch(self.shape(u), a_shape));
        }
        let states = a_shape[1];
        for m in [bmat, cmat] {
            if self.shape(m) != [batch, states, h, w] {
                return Err(mismatch(&[batch, states, h, w], self.shape(m)));
            }
        }
        if self.shape(skip) != [channels] {
            return Err(mismatch(&[channels], self.shape(skip)));
        }
        let len = h * w;
        if len == 0 {
            return Err(TensorError::InvalidArgument {
                op: "selective_scan",
                what: "sequence length must be at least 1".into(),
            });
        }
        let dims = Dims {
            batch,
            channels,
            states,
            len,
        };
        let order = direction.order(h, w);
        let slices: [&[T]; 6] = [u, delta, a_log, bmat, cmat, skip].map(|v| self.data(v));
        let mut out = vec![0.0; batch * channels * len];
        out.par_chunks_mut(len).enumerate().for_each(|(k, dst)| {
            let l = lane(&slices, dims, k / channels, k % channels);
            run_lane(&l, &order, dst, None);
        });
        let out = Tensor::new(vec![batch, channels, h, w], out.into_iter().map(T::of).collect())?;
        Ok(self.push(
            out,
            vec![u, delta, a_log, bmat, cmat, skip],
            Box::new(ScanRule { dims, order }),
        ))
    }
}
