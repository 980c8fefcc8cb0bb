//! One-dimensional complex FFT: iterative radix-2 for power-of-two lengths,
//! Bluestein's chirp-z reformulation for everything else.

use std::f64::consts::PI;

use num_complex::Complex64;

#[derive(Debug, Clone)]
enum Plan {
    Trivial,
    Radix2 {
        /// e^{-2πik/n} for k in 0..n/2
        twiddles: Vec<Complex64>,
    },
    Bluestein {
        /// e^{-πik²/n}
        chirp: Vec<Complex64>,
        /// Forward transform of the conjugate chirp, zero-padded to `inner`.
        kernel: Vec<Complex64>,
        inner: Box<Fft>,
    },
}

/// Unnormalized forward DFT of a fixed length.
#[derive(Debug, Clone)]
pub struct Fft {
    len: usize,
    plan: Plan,
}

impl Fft {
    pub fn new(len: usize) -> Self {
        assert!(len >= 1, "FFT length must be positive");
        let plan = if len == 1 {
            Plan::Trivial
        } else if len.is_power_of_two() {
            Plan::Radix2 {
                twiddles: (0..len / 2)
                    .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / len as f64))
                    .collect(),
            }
        } else {
            let m = (2 * len - 1).next_power_of_two();
            let inner = Fft::new(m);
            // k² mod 2n keeps the phase argument small and exact
            let chirp: Vec<Complex64> = (0..len)
                .map(|k| {
                    let q = (k * k) % (2 * len);
                    Complex64::from_polar(1.0, -PI * q as f64 / len as f64)
                })
                .collect();
            let mut kernel = vec![Complex64::new(0.0, 0.0); m];
            kernel[0] = chirp[0].conj();
            for k in 1..len {
                kernel[k] = chirp[k].conj();
                kernel[m - k] = chirp[k].conj();
            }
            inner.forward(&mut kernel);
            Plan::Bluestein {
                chirp,
                kernel,
                inner: Box::new(inner),
            }
        };
        Self { len, plan }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// In-place X[k] = Σ x[n] e^{-2πink/N}.
    pub fn forward(&self, buf: &mut [Complex64]) {
        assert_eq!(buf.len(), self.len);
        match &self.plan {
            Plan::Trivial => {}
            Plan::Radix2 { twiddles } => radix2(buf, twiddles),
            Plan::Bluestein { chirp, kernel, inner } => {
                let m = kernel.len();
                let mut a = vec![Complex64::new(0.0, 0.0); m];
                for ((dst, x), c) in a.iter_mut().zip(buf.iter()).zip(chirp) {
                    *dst = x * c;
                }
                inner.forward(&mut a);
                for (v, k) in a.iter_mut().zip(kernel) {
                    *v *= k;
                }
                inner.inverse_unscaled(&mut a);
                let scale = 1.0 / m as f64;
                for ((x, v), c) in buf.iter_mut().zip(&a).zip(chirp) {
                    *x = v * c * scale;
                }
            }
        }
    }

    /// In-place x[n] = Σ X[k] e^{+2πink/N}, without the 1/N factor.
    pub fn inverse_unscaled(&self, buf: &mut [Complex64]) {
        buf.iter_mut().for_each(|v| *v = v.conj());
        self.forward(buf);
        buf.iter_mut().for_each(|v| *v = v.conj());
    }
}

fn radix2(buf: &mut [Complex64], twiddles: &[Complex64]) {
    let n = buf.len();
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if i < j {
            buf.swap(i, j);
        }
    }
    let mut size = 2;
    while size <= n {
        let half = size / 2;
        let step = n / size;
        for start in (0..n).step_by(size) {
            for k in 0..half {
                let t = buf[start + k + half] * twiddles[k * step];
                let u = buf[start + k];
                buf[start + k] = u + t;
                buf[start + k + half] = u - t;
            }
        }
        size *= 2;
    }
}

/// Row-then-column 2-D transform over a row-major `h × w` buffer.
pub(crate) fn fft2_in_place(buf: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    let (row_plan, col_plan) = (Fft::new(w), Fft::new(h));
    let apply = |plan: &Fft, v: &mut [Complex64]| {
        if inverse {
            plan.inverse_unscaled(v)
        } else {
            plan.forward(v)
        }
    };
    for row in buf.chunks_mut(w) {
        apply(&row_plan, row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = buf[y * w + x];
        }
        apply(&col_plan, &mut col);
        for y in 0..h {
            buf[y * w + x] = col[y];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn direct_dft(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(j, v)| v * Complex64::from_polar(1.0, -2.0 * PI * ((j * k) % n) as f64 / n as f64))
                    .sum()
            })
            .collect()
    }

    #[test]
    fn matches_direct_dft_for_all_small_lengths() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 1..=40 {
            let x: Vec<Complex64> = (0..n)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let mut y = x.clone();
            Fft::new(n).forward(&mut y);
            for (a, b) in y.iter().zip(direct_dft(&x)) {
                assert!((a - b).norm() < 1e-10, "n={n}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn inverse_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in [1, 2, 3, 7, 8, 12, 64, 100] {
            let x: Vec<Complex64> = (0..n)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let mut y = x.clone();
            let plan = Fft::new(n);
            plan.forward(&mut y);
            plan.inverse_unscaled(&mut y);
            for (a, b) in y.iter().zip(&x) {
                assert!((a / n as f64 - b).norm() < 1e-12);
            }
        }
    }
}
