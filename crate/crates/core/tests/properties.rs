//! Cross-module properties exercised through the public API only.

use fgmamba_core::model::{param_count, FgMamba, ModelConfig, NetworkVars};
use fgmamba_core::spectral::{fft2, highfreq_extract};
use fgmamba_core::testing::random_tensor;
use fgmamba_core::training::{bicubic_downsample, psnr, ssim, Transform};
use fgmamba_core::Tensor;
use proptest::prelude::*;

fn plane(h: usize, w: usize, seed: u64) -> Tensor<f64> {
    random_tensor(&[h, w], seed, 1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fft_is_linear(h in 1usize..12, w in 1usize..12, a in -2.0f64..2.0, b in -2.0f64..2.0, seed in 0u64..1000) {
        let (x, y) = (plane(h, w, seed), plane(h, w, seed + 1));
        let mix = Tensor::new(vec![h, w], x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect()).unwrap();
        let (fx, fy, fm) = (fft2(&x).unwrap(), fft2(&y).unwrap(), fft2(&mix).unwrap());
        for ((m, p), q) in fm.bins.iter().zip(&fx.bins).zip(&fy.bins) {
            prop_assert!((m - (p * a + q * b)).norm() < 1e-9);
        }
    }

    #[test]
    fn highfreq_never_adds_energy(h in 1usize..16, w in 1usize..16, seed in 0u64..1000) {
        let x = plane(h, w, seed);
        let y = highfreq_extract(&x).unwrap();
        let energy = |t: &Tensor<f64>| t.data().iter().map(|v| v * v).sum::<f64>();
        prop_assert!(energy(&y) <= energy(&x) * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn metrics_are_symmetric(seed in 0u64..1000, side in 11usize..20) {
        let a = random_tensor::<f64>(&[1, side, side], seed, 0.5).map(|v| v + 0.5);
        let b = random_tensor::<f64>(&[1, side, side], seed + 7, 0.5).map(|v| v + 0.5);
        prop_assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
        prop_assert!((ssim(&a, &b, 1.0).unwrap() - ssim(&b, &a, 1.0).unwrap()).abs() < 1e-12);
        prop_assert!(ssim(&a, &b, 1.0).unwrap() <= 1.0 + 1e-12);
    }

    #[test]
    fn downsampling_preserves_constants(c in 0.0f64..1.0, scale in 2usize..5, h in 1usize..5, w in 1usize..5) {
        let img = Tensor::full(vec![1, h * scale, w * scale], c);
        let lr = bicubic_downsample(&img, scale).unwrap();
        prop_assert_eq!(lr.shape(), &[1, h, w][..]);
        prop_assert!(lr.data().iter().all(|v| (v - c).abs() < 1e-12));
    }
}

#[test]
fn transforms_form_a_group() {
    let x = random_tensor::<f32>(&[2, 5, 5], 3, 1.0);
    let images: Vec<Tensor<f32>> = Transform::ALL.iter().map(|t| t.apply(&x)).collect();
    for (i, a) in images.iter().enumerate() {
        for b in &images[i + 1..] {
            assert_ne!(a, b);
        }
    }
    for t in Transform::ALL {
        let y = t.apply(&x);
        // some transform undoes every transform
        assert!(Transform::ALL.iter().any(|u| u.apply(&y) == x));
        assert_eq!(
            Transform::ALL.iter().filter(|u| images.contains(&u.apply(&y))).count(),
            8
        );
    }
}

#[test]
fn declared_shapes_match_counts_and_init() {
    for cfg in [
        ModelConfig::tiny(),
        ModelConfig::desk(),
        ModelConfig {
            scale: 4,
            in_channels: 3,
            ..ModelConfig::tiny()
        },
    ] {
        let decls = NetworkVars::declare(&cfg);
        let declared: usize = decls.iter().map(|d| d.shape.iter().product::<usize>()).sum();
        assert_eq!(declared, param_count(&cfg));
        let model = FgMamba::<f32>::new(cfg, 0).unwrap();
        assert_eq!(model.params().scalar_count(), declared);
        assert!(model.params().iter().all(|(_, t)| t.is_finite()));
    }
}

#[test]
fn initialization_depends_only_on_seed_and_name() {
    let narrow = FgMamba::<f64>::new(
        ModelConfig {
            use_pffm: false,
            ..ModelConfig::tiny()
        },
        3,
    )
    .unwrap();
    let full = FgMamba::<f64>::new(ModelConfig::tiny(), 3).unwrap();
    for (name, t) in narrow.params().iter() {
        assert_eq!(full.params().get(name), Some(t), "{name}");
    }
    let other = FgMamba::<f64>::new(ModelConfig::tiny(), 4).unwrap();
    assert_ne!(other.params().get("head.weight"), full.params().get("head.weight"));
}

#[test]
fn f32_inference_tracks_f64() {
    let cfg = ModelConfig::tiny();
    let wide = FgMamba::<f64>::new(cfg, 2).unwrap();
    let narrow = FgMamba::<f32>::new(cfg, 2).unwrap();
    let x = random_tensor::<f64>(&[1, 1, 9, 10], 5, 0.5).map(|v| v + 0.5);
    let (a, b) = (wide.infer(&x).unwrap(), narrow.infer(&x.cast::<f32>()).unwrap());
    let worst = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(p, q)| (p - *q as f64).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-4, "{worst}");
}
