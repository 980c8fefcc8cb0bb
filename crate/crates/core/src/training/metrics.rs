use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Tensor, TensorError};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        }
        .into());
    }
    Ok(())
}

fn check_peak(peak: f64) -> Result<()> {
    if peak > 0.0 && peak.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("peak must be positive, got {peak}")))
    }
}

/// Peak signal-to-noise ratio in dB; `+inf` for identical inputs.
pub fn psnr<T: Real>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    same_shape("psnr", a, b)?;
    check_peak(peak)?;
    if a.is_empty() {
        return Err(Error::InvalidInput("psnr of empty images".into()));
    }
    let sse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2))
        .sum();
    let mse = sse / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Normalized 1-D Gaussian; the 2-D window is its outer product.
pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut g = [0.0; SSIM_WINDOW];
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-(d * d) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= total);
    g
}

/// Separable valid-mode filtering of an h×w plane.
fn filter_valid(src: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|k| g[k] * src[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|k| g[k] * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

fn plane_ssim(a: &[f64], b: &[f64], h: usize, w: usize, peak: f64) -> f64 {
    let g = gaussian_window();
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect() };
    let mu_a = filter_valid(a, h, w, &g);
    let mu_b = filter_valid(b, h, w, &g);
    let aa = filter_valid(&prod(|x, _| x * x), h, w, &g);
    let bb = filter_valid(&prod(|_, y| y * y), h, w, &g);
    let ab = filter_valid(&prod(|x, y| x * y), h, w, &g);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    total / n as f64
}

/// Mean structural similarity over every plane of the last two axes.
pub fn ssim<T: Real>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    same_shape("ssim", a, b)?;
    check_peak(peak)?;
    let s = a.shape();
    if s.len() < 2 || s[s.len() - 2] < SSIM_WINDOW || s[s.len() - 1] < SSIM_WINDOW {
        return Err(Error::InvalidInput(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {s:?}"
        )));
    }
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let planes = a.len() / (h * w);
    let total: f64 = (0..planes)
        .map(|p| {
            let pa: Vec<f64> = a.data()[p * h * w..][..h * w].iter().map(|v| v.as_f64()).collect();
            let pb: Vec<f64> = b.data()[p * h * w..][..h * w].iter().map(|v| v.as_f64()).collect();
            plane_ssim(&pa, &pb, h, w, peak)
        })
        .sum();
    Ok(total / planes as f64)
}
