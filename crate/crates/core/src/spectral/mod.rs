//! 2-D Fourier transforms and the magnitude-thresholded high-pass filter
//! used by the pyramid frequency fusion module.

mod fft;

pub use fft::Fft;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::autodiff::{BackwardRule, OpKind, Tape, Var};
use crate::real::Real;
use crate::tensor::{Result, Tensor, TensorError};

/// Relative margin under which a bin magnitude counts as tied with the mean.
/// Transform round-off makes analytically equal magnitudes differ in the last
/// few ulps; those ties are dropped like exact ones.
pub const TIE_TOLERANCE: f64 = 1e-10;

/// Dense complex spectrum of one `h × w` plane, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrum {
    pub height: usize,
    pub width: usize,
    pub bins: Vec<Complex64>,
}

impl ComplexSpectrum {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bins: vec![Complex64::new(0.0, 0.0); height * width],
        }
    }

    pub fn re(&self) -> impl Iterator<Item = f64> + '_ {
        self.bins.iter().map(|c| c.re)
    }

    pub fn im(&self) -> impl Iterator<Item = f64> + '_ {
        self.bins.iter().map(|c| c.im)
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.bins.iter().map(|c| c.norm()).collect()
    }

    pub fn energy(&self) -> f64 {
        self.bins.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Binary indicator over frequency bins.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreqMask {
    pub height: usize,
    pub width: usize,
    pub keep: Vec<bool>,
}

impl FreqMask {
    /// Keeps bins whose magnitude strictly exceeds the mean magnitude of the
    /// plane (DC included).
    pub fn above_mean(spec: &ComplexSpectrum) -> Self {
        let mags = spec.magnitudes();
        let mean = mags.iter().sum::<f64>() / mags.len() as f64;
        let keep = mags.iter().map(|&m| m - mean > TIE_TOLERANCE * mean).collect();
        Self {
            height: spec.height,
            width: spec.width,
            keep,
        }
    }

    pub fn count(&self) -> usize {
        self.keep.iter().filter(|k| **k).count()
    }

    pub fn apply(&self, spec: &mut ComplexSpectrum) {
        for (b, &k) in spec.bins.iter_mut().zip(&self.keep) {
            if !k {
                *b = Complex64::new(0.0, 0.0);
            }
        }
    }
}

fn plane_dims<T: Real>(plane: &Tensor<T>) -> Result<(usize, usize)> {
    match plane.shape() {
        [h, w] => Ok((*h, *w)),
        s => Err(TensorError::Rank {
            op: "fft2",
            expected: 2,
            shape: s.to_vec(),
        }),
    }
}

fn forward_plane(data: impl Iterator<Item = f64>, h: usize, w: usize) -> ComplexSpectrum {
    let mut bins: Vec<Complex64> = data.map(|v| Complex64::new(v, 0.0)).collect();
    fft::fft2_in_place(&mut bins, h, w, false);
    ComplexSpectrum {
        height: h,
        width: w,
        bins,
    }
}

/// Complex inverse with 1/(h·w) normalization.
fn inverse_complex(spec: &ComplexSpectrum) -> Vec<Complex64> {
    let mut bins = spec.bins.clone();
    fft::fft2_in_place(&mut bins, spec.height, spec.width, true);
    let scale = 1.0 / (spec.height * spec.width) as f64;
    bins.iter_mut().for_each(|v| *v *= scale);
    bins
}

/// Unnormalized forward 2-D DFT of a real `h × w` plane.
pub fn fft2<T: Real>(plane: &Tensor<T>) -> Result<ComplexSpectrum> {
    let (h, w) = plane_dims(plane)?;
    Ok(forward_plane(plane.data().iter().map(|v| v.as_f64()), h, w))
}

/// Inverse 2-D DFT with 1/(h·w) normalization; the real part is returned.
pub fn ifft2(spec: &ComplexSpectrum) -> Tensor<f64> {
    let data = inverse_complex(spec).into_iter().map(|c| c.re).collect();
    Tensor::new(vec![spec.height, spec.width], data).expect("spectrum is well formed")
}

fn highfreq_plane(data: impl Iterator<Item = f64>, h: usize, w: usize) -> (Vec<f64>, FreqMask) {
    let mut spec = forward_plane(data, h, w);
    let mask = FreqMask::above_mean(&spec);
    mask.apply(&mut spec);
    let out = inverse_complex(&spec).into_iter().map(|c| c.re).collect();
    (out, mask)
}

/// Re(IFFT(FFT(x) ⊙ M)) with M the above-mean magnitude mask of the plane.
pub fn highfreq_extract<T: Real>(plane: &Tensor<T>) -> Result<Tensor<f64>> {
    let (h, w) = plane_dims(plane)?;
    let (out, _) = highfreq_plane(plane.data().iter().map(|v| v.as_f64()), h, w);
    Tensor::new(vec![h, w], out)
}

struct HighFreqRule {
    height: usize,
    width: usize,
    masks: Vec<FreqMask>,
}

impl<T: Real> BackwardRule<T> for HighFreqRule {
    fn kind(&self) -> OpKind {
        OpKind::HighFreq
    }

    /// The forward map is x ↦ Re(F⁻¹ M F x) with the mask held fixed. Both F
    /// and F⁻¹ are symmetric matrices, so its transpose is g ↦ Re(F M F⁻¹ g).
    fn backward(&self, _inputs: &[&Tensor<T>], _output: &Tensor<T>, gy: &[T], _needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let (h, w) = (self.height, self.width);
        let mut gx = vec![T::zero(); gy.len()];
        gx.par_chunks_mut(h * w)
            .zip(gy.par_chunks(h * w))
            .zip(self.masks.par_iter())
            .for_each(|((dst, g), mask)| {
                let mut spec = ComplexSpectrum {
                    height: h,
                    width: w,
                    bins: g.iter().map(|v| Complex64::new(v.as_f64(), 0.0)).collect(),
                };
                spec.bins = inverse_complex(&spec);
                mask.apply(&mut spec);
                fft::fft2_in_place(&mut spec.bins, h, w, false);
                for (d, c) in dst.iter_mut().zip(&spec.bins) {
                    *d = T::of(c.re);
                }
            });
        vec![Some(gx)]
    }
}

impl<T: Real> Tape<T> {
    /// High-frequency extraction applied independently to every (batch,
    /// channel) plane of a rank-4 tensor. Gradients flow through the real
    /// path with the mask treated as constant.
    pub fn highfreq(&mut self, input: Var) -> Result<Var> {
        let (b, c, h, w) = self.value(input).dims4("highfreq")?;
        let x = self.data(input);
        let planes: Vec<(Vec<f64>, FreqMask)> = x
            .par_chunks(h * w)
            .map(|p| highfreq_plane(p.iter().map(|v| v.as_f64()), h, w))
            .collect();
        let mut out = Vec::with_capacity(x.len());
        let mut masks = Vec::with_capacity(b * c);
        for (vals, mask) in planes {
            out.extend(vals.into_iter().map(T::of));
            masks.push(mask);
        }
        let out = Tensor::new(vec![b, c, h, w], out)?;
        Ok(self.push(
            out,
            vec![input],
            Box::new(HighFreqRule {
                height: h,
                width: w,
                masks,
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{assert_all_close, check_gradients, random_tensor};
    use std::f64::consts::PI;

    fn direct_dft2(x: &[f64], h: usize, w: usize) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); h * w];
        for u in 0..h {
            for v in 0..w {
                let mut acc = Complex64::new(0.0, 0.0);
                for y in 0..h {
                    for xx in 0..w {
                        let phase = -2.0 * PI * ((u * y) as f64 / h as f64 + (v * xx) as f64 / w as f64);
                        acc += x[y * w + xx] * Complex64::from_polar(1.0, phase);
                    }
                }
                out[u * w + v] = acc;
            }
        }
        out
    }

    fn direct_idft2_real(bins: &[Complex64], h: usize, w: usize) -> Vec<f64> {
        let mut out = vec![0.0; h * w];
        for y in 0..h {
            for xx in 0..w {
                let mut acc = Complex64::new(0.0, 0.0);
                for u in 0..h {
                    for v in 0..w {
                        let phase = 2.0 * PI * ((u * y) as f64 / h as f64 + (v * xx) as f64 / w as f64);
                        acc += bins[u * w + v] * Complex64::from_polar(1.0, phase);
                    }
                }
                out[y * w + xx] = acc.re / (h * w) as f64;
            }
        }
        out
    }

    #[test]
    fn constant_plane_has_only_dc() {
        for (h, w) in [(4, 8), (5, 3), (6, 6)] {
            let c = 0.37;
            let spec = fft2(&Tensor::full(vec![h, w], c)).unwrap();
            assert!((spec.bins[0].re - (h * w) as f64 * c).abs() < 1e-9);
            for b in &spec.bins[1..] {
                assert!(b.norm() < 1e-9);
            }
        }
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        for (h, w) in [(8, 8), (5, 7)] {
            let mut x = Tensor::<f64>::zeros(vec![h, w]);
            x.data_mut()[0] = 1.0;
            for m in fft2(&x).unwrap().magnitudes() {
                assert!((m - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matches_direct_dft() {
        for (h, w) in [(8, 8), (6, 10), (3, 5)] {
            let x = random_tensor::<f64>(&[h, w], 3, 1.0);
            let spec = fft2(&x).unwrap();
            for (a, b) in spec.bins.iter().zip(direct_dft2(x.data(), h, w)) {
                assert!((a - b).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn inverse_edge_cases() {
        assert!(ifft2(&ComplexSpectrum::zeros(4, 3)).data().iter().all(|v| *v == 0.0));
        let mut spec = ComplexSpectrum::zeros(3, 4);
        spec.bins[0] = Complex64::new(12.0 * 0.5, 0.0);
        for v in ifft2(&spec).data() {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn highfreq_constant_plane_is_kept() {
        for (h, w) in [(8, 8), (5, 5), (3, 7)] {
            let y = highfreq_extract(&Tensor::full(vec![h, w], 0.6)).unwrap();
            for v in y.data() {
                assert!((v - 0.6).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn highfreq_impulse_is_removed() {
        for (h, w) in [(8, 8), (6, 6), (5, 7)] {
            let mut x = Tensor::<f64>::zeros(vec![h, w]);
            x.data_mut()[0] = 1.0;
            assert!(highfreq_extract(&x).unwrap().data().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn highfreq_matches_direct_oracle() {
        for (h, w) in [(8, 8), (7, 6)] {
            let x = random_tensor::<f64>(&[h, w], 21, 1.0);
            let mut bins = direct_dft2(x.data(), h, w);
            let mags: Vec<f64> = bins.iter().map(|c| c.norm()).collect();
            let mean = mags.iter().sum::<f64>() / mags.len() as f64;
            for (b, m) in bins.iter_mut().zip(&mags) {
                if *m <= mean {
                    *b = Complex64::new(0.0, 0.0);
                }
            }
            let expect = direct_idft2_real(&bins, h, w);
            assert_all_close(highfreq_extract(&x).unwrap().data(), &expect, 1e-9);
        }
    }

    #[test]
    fn highfreq_does_not_add_energy() {
        let x = random_tensor::<f64>(&[9, 12], 4, 1.0);
        let y = highfreq_extract(&x).unwrap();
        let e = |t: &Tensor<f64>| t.data().iter().map(|v| v * v).sum::<f64>();
        assert!(e(&y) <= e(&x));
    }

    #[test]
    fn tape_op_matches_per_plane_function() {
        let x = random_tensor::<f64>(&[2, 3, 5, 8], 8, 1.0);
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let y = tape.highfreq(v).unwrap();
        for p in 0..6 {
            let plane = Tensor::new(vec![5, 8], x.data()[p * 40..][..40].to_vec()).unwrap();
            assert_eq!(&tape.data(y)[p * 40..][..40], highfreq_extract(&plane).unwrap().data());
        }
    }

    #[test]
    fn gradient_through_fixed_mask() {
        for shape in [[1, 2, 4, 4], [1, 1, 5, 6]] {
            let x = random_tensor(&shape, 6, 1.0);
            check_gradients(&[x], 1e-4, |t, v| t.highfreq(v[0]));
        }
    }
}
