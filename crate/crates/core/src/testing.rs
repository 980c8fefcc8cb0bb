//! Helpers shared by unit tests and downstream integration tests: seeded
//! random tensors and a central-difference gradient checker.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::real::Real;
use crate::tensor::Tensor;

/// Uniform values in `[-amp, amp)`.
pub fn random_tensor<T: Real>(shape: &[usize], seed: u64, amp: f64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| T::of(rng.gen_range(-amp..amp)))
}

pub fn assert_close(actual: f64, expected: f64, tol: f64) {
    let scale = expected.abs().max(1.0);
    assert!(
        (actual - expected).abs() <= tol * scale,
        "{actual} vs {expected} (tol {tol})"
    );
}

pub fn assert_all_close(actual: &[f64], expected: &[f64], tol: f64) {
    assert_eq!(actual.len(), expected.len(), "length mismatch");
    for (i, (&a, &e)) in actual.iter().zip(expected).enumerate() {
        let scale = e.abs().max(1.0);
        assert!((a - e).abs() <= tol * scale, "index {i}: {a} vs {e} (tol {tol})");
    }
}

/// Relative error with a small absolute floor so that near-zero
/// gradients are compared absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Builds `f` on the given inputs, contracts the output with a fixed random
/// projection and compares every input gradient against central differences.
/// Panics with the worst offender when the relative error exceeds `tol`.
pub fn check_gradients<F, E>(inputs: &[Tensor<f64>], tol: f64, f: F)
where
    F: Fn(&mut Tape<f64>, &[Var]) -> std::result::Result<Var, E>,
    E: std::fmt::Debug,
{
    let worst = max_gradient_error(inputs, 1e-5, &f);
    for (i, e) in worst.iter().enumerate() {
        assert!(*e < tol, "input {i}: max relative gradient error {e}");
    }
}

/// Maximum relative error between analytic and numeric gradients per input.
pub fn max_gradient_error<F, E>(inputs: &[Tensor<f64>], step: f64, f: &F) -> Vec<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> std::result::Result<Var, E>,
    E: std::fmt::Debug,
{
    let eval = |ins: &[Tensor<f64>], backward: bool| -> (f64, Vec<Vec<f64>>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars).expect("forward");
        let proj = tape.constant(random_tensor(tape.shape(out), 0xC0FFEE, 1.0));
        let prod = tape.mul(out, proj).expect("projection");
        let loss = tape.sum(prod);
        let value = tape.value(loss).item();
        let grads = if backward {
            tape.backward(loss).expect("backward");
            vars.iter()
                .map(|&v| {
                    tape.grad(v)
                        .map(<[f64]>::to_vec)
                        .unwrap_or_else(|| vec![0.0; tape.value(v).len()])
                })
                .collect()
        } else {
            Vec::new()
        };
        (value, grads)
    };
    let (_, analytic) = eval(inputs, true);
    let mut worst = vec![0.0f64; inputs.len()];
    for (i, input) in inputs.iter().enumerate() {
        for k in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[k] += step;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[k] -= step;
            let numeric = (eval(&plus, false).0 - eval(&minus, false).0) / (2.0 * step);
            worst[i] = worst[i].max(relative_error(analytic[i][k], numeric));
        }
    }
    worst
}
