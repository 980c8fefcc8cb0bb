//! Differentiable primitives recorded on a [`Tape`](crate::autodiff::Tape).

pub mod conv;
pub mod elementwise;
pub mod linear;
pub mod loss;
pub mod norm;
pub mod pool;
pub mod shape;

pub use conv::{ConvParams, ConvSpec};
pub use elementwise::{sigmoid, softplus};
pub use norm::LAYER_NORM_EPS;

/// Mirror an index into `0..n` without repeating the edge sample
/// (`… c b | a b c d | c b …`). Folds repeatedly for large offsets.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

#[cfg(test)]
mod tests {
    use super::reflect_index;

    #[test]
    fn reflection_without_edge_repeat() {
        let row: Vec<usize> = (-3..7).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(row, [3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect_index(5, 1), 0);
        assert_eq!(reflect_index(-1, 2), 1);
    }
}
