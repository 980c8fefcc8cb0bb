use crate::autodiff::{BackwardRule, OpKind, Tape, Var};
use crate::real::Real;
use crate::tensor::{Result, Tensor, TensorError};

struct L1Rule;

impl<T: Real> BackwardRule<T> for L1Rule {
    fn kind(&self) -> OpKind {
        OpKind::L1Loss
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, gy: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let (p, t) = (inputs[0].data(), inputs[1].data());
        let inv = gy[0] / T::of(p.len() as f64);
        // subgradient 0 at exact ties
        let sign: Vec<T> = p
            .iter()
            .zip(t)
            .map(|(&a, &b)| {
                if a > b {
                    inv
                } else if a < b {
                    -inv
                } else {
                    T::zero()
                }
            })
            .collect();
        let gt = needs[1].then(|| sign.iter().map(|&v| -v).collect());
        vec![needs[0].then_some(sign), gt]
    }
}

impl<T: Real> Tape<T> {
    /// Mean absolute error between two equally shaped tensors.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.shape(pred) != self.shape(target) {
            return Err(TensorError::ShapeMismatch {
                op: "l1_loss",
                lhs: self.shape(pred).to_vec(),
                rhs: self.shape(target).to_vec(),
            });
        }
        let (p, t) = (self.data(pred), self.data(target));
        let total: f64 = p.iter().zip(t).map(|(a, b)| (a.as_f64() - b.as_f64()).abs()).sum();
        let out = Tensor::scalar(T::of(total / p.len() as f64));
        Ok(self.push(out, vec![pred, target], Box::new(L1Rule)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::random_tensor;

    #[test]
    fn identical_is_zero_and_unit_gap_is_one() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(random_tensor(&[2, 3], 1, 1.0));
        let l = tape.l1_loss(a, a).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
        let z = tape.constant(Tensor::zeros(vec![4, 4]));
        let o = tape.constant(Tensor::full(vec![4, 4], 1.0));
        let l = tape.l1_loss(z, o).unwrap();
        assert_eq!(tape.value(l).item(), 1.0);
    }

    #[test]
    fn gradient_is_sign_over_n() {
        let pred = Tensor::new(vec![4], vec![0.5, -1.0, 2.0, 3.0]).unwrap();
        let target = Tensor::new(vec![4], vec![0.0, 0.0, 2.0, 4.0]).unwrap();
        let mut tape = Tape::<f64>::new();
        let p = tape.param(pred);
        let t = tape.constant(target);
        let l = tape.l1_loss(p, t).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(p).unwrap(), &[0.25, -0.25, 0.0, -0.25]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(vec![2, 3]));
        let b = tape.constant(Tensor::zeros(vec![3, 2]));
        assert!(tape.l1_loss(a, b).is_err());
    }
}
