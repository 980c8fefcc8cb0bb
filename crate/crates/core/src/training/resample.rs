use crate::error::{Error, Result};
use crate::ops::reflect_index;
use crate::real::Real;
use crate::tensor::Tensor;

pub const CUBIC_A: f64 = -0.5;

/// Keys cubic convolution kernel.
pub fn cubic(x: f64) -> f64 {
    let a = CUBIC_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Normalized taps (source index, weight) of each output sample when shrinking
/// `len` by an integer factor with a kernel stretched by that factor.
fn taps(len: usize, scale: usize) -> Vec<Vec<(usize, f64)>> {
    let s = scale as f64;
    let support = 2.0 * s;
    (0..len / scale)
        .map(|i| {
            let center = (i as f64 + 0.5) * s - 0.5;
            let lo = (center - support).floor() as isize;
            let hi = (center + support).ceil() as isize;
            let mut row: Vec<(usize, f64)> = (lo..=hi)
                .map(|j| (reflect_index(j, len), cubic((j as f64 - center) / s)))
                .filter(|(_, w)| *w != 0.0)
                .collect();
            let total: f64 = row.iter().map(|(_, w)| w).sum();
            row.iter_mut().for_each(|(_, w)| *w /= total);
            row
        })
        .collect()
}

/// Antialiased separable bicubic reduction of the last two axes.
pub fn bicubic_downsample<T: Real>(image: &Tensor<T>, scale: usize) -> Result<Tensor<T>> {
    let shape = image.shape();
    if shape.len() < 2 || scale == 0 {
        return Err(Error::InvalidInput(
            "bicubic_downsample needs an image and a positive scale".into(),
        ));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    if h % scale != 0 || w % scale != 0 {
        return Err(Error::InvalidInput(format!(
            "image extents {h}x{w} are not divisible by scale {scale}"
        )));
    }
    let (oh, ow) = (h / scale, w / scale);
    let (row_taps, col_taps) = (taps(w, scale), taps(h, scale));
    let planes = image.len() / (h * w);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut horiz = vec![0.0; h * ow];
    for p in 0..planes {
        let src = &image.data()[p * h * w..][..h * w];
        for y in 0..h {
            for (x, taps) in row_taps.iter().enumerate() {
                horiz[y * ow + x] = taps.iter().map(|&(j, wt)| wt * src[y * w + j].as_f64()).sum();
            }
        }
        for taps in &col_taps {
            for x in 0..ow {
                let v: f64 = taps.iter().map(|&(j, wt)| wt * horiz[j * ow + x]).sum();
                out.push(T::of(v));
            }
        }
    }
    let mut out_shape = shape.to_vec();
    let r = out_shape.len();
    out_shape[r - 2] = oh;
    out_shape[r - 1] = ow;
    Ok(Tensor::new(out_shape, out)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::random_tensor;
    use crate::training::augment::Transform;

    #[test]
    fn kernel_shape() {
        assert_eq!(cubic(0.0), 1.0);
        assert_eq!(cubic(1.0), 0.0);
        assert_eq!(cubic(2.0), 0.0);
        assert!((cubic(0.5) - 0.5625).abs() < 1e-15);
        assert!((cubic(1.5) + 0.0625).abs() < 1e-15);
        // partition of unity at integer spacing
        for off in [0.0, 0.25, 0.5, 0.8] {
            let s: f64 = (-3..=3).map(|k| cubic(k as f64 - off)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_stays_constant() {
        let img = Tensor::<f64>::full(vec![1, 2, 12, 8], 0.37);
        for s in [1, 2, 4] {
            let y = bicubic_downsample(&img, s).unwrap();
            assert_eq!(y.shape(), [1, 2, 12 / s, 8 / s]);
            assert!(y.data().iter().all(|v| (v - 0.37).abs() < 1e-12));
        }
    }

    #[test]
    fn unit_scale_is_identity() {
        let img: Tensor<f64> = random_tensor(&[3, 9, 7], 1, 1.0);
        let y = bicubic_downsample(&img, 1).unwrap();
        for (a, b) in y.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ramp_matches_dense_kernel_sum() {
        let (h, w, s) = (6, 16, 2);
        let img = Tensor::<f64>::from_fn(vec![h, w], |i| (i % w) as f64 / w as f64);
        let y = bicubic_downsample(&img, s).unwrap();
        // dense: weight every mirrored source column by the stretched kernel
        for ox in 0..w / s {
            let c = (ox as f64 + 0.5) * s as f64 - 0.5;
            let (mut num, mut den) = (0.0, 0.0);
            for j in -(3 * w as isize)..(4 * w as isize) {
                let wt = cubic((j as f64 - c) / s as f64);
                let mut m = j;
                while m < 0 || m >= w as isize {
                    m = if m < 0 { -m } else { 2 * (w as isize - 1) - m };
                }
                num += wt * (m as f64 / w as f64);
                den += wt;
            }
            for oy in 0..h / s {
                assert!((y.data()[oy * (w / s) + ox] - num / den).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn commutes_with_symmetries() {
        let img: Tensor<f64> = random_tensor(&[1, 1, 16, 16], 5, 1.0);
        for t in Transform::ALL {
            for s in [2, 4] {
                let a = bicubic_downsample(&t.apply(&img), s).unwrap();
                let b = t.apply(&bicubic_downsample(&img, s).unwrap());
                for (x, y) in a.data().iter().zip(b.data()) {
                    assert!((x - y).abs() < 1e-6, "{t} x{s}");
                }
            }
        }
    }

    #[test]
    fn rejects_indivisible_extents() {
        let img = Tensor::<f64>::zeros(vec![1, 1, 9, 8]);
        assert!(bicubic_downsample(&img, 2).is_err());
    }
}
