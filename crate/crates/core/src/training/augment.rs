use std::fmt;

use rand::Rng;

use crate::real::Real;
use crate::tensor::Tensor;

/// Horizontal mirror (optional) followed by counter-clockwise quarter turns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Transform {
    pub hflip: bool,
    pub quarter_turns: u8,
}

impl Transform {
    pub const IDENTITY: Transform = Transform::new(false, 0);
    pub const HFLIP: Transform = Transform::new(true, 0);
    pub const ROT90: Transform = Transform::new(false, 1);
    pub const ROT180: Transform = Transform::new(false, 2);
    pub const ROT270: Transform = Transform::new(false, 3);

    pub const ALL: [Transform; 8] = [
        Transform::new(false, 0),
        Transform::new(false, 1),
        Transform::new(false, 2),
        Transform::new(false, 3),
        Transform::new(true, 0),
        Transform::new(true, 1),
        Transform::new(true, 2),
        Transform::new(true, 3),
    ];

    pub const fn new(hflip: bool, quarter_turns: u8) -> Self {
        Self {
            hflip,
            quarter_turns: quarter_turns % 4,
        }
    }

    pub fn sample<R: Rng>(rng: &mut R) -> Self {
        Self::ALL[rng.gen_range(0..Self::ALL.len())]
    }

    /// Applies the transform to the last two axes of `t`.
    pub fn apply<T: Real>(self, t: &Tensor<T>) -> Tensor<T> {
        let mut out = if self.hflip { flip_horizontal(t) } else { t.clone() };
        for _ in 0..self.quarter_turns {
            out = rotate90(&out);
        }
        out
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.hflip, self.quarter_turns) {
            (false, 0) => write!(f, "none"),
            (true, 0) => write!(f, "hflip"),
            (false, q) => write!(f, "rot{}", 90 * q as u32),
            (true, q) => write!(f, "hflip+rot{}", 90 * q as u32),
        }
    }
}

fn planes<T: Real>(t: &Tensor<T>) -> (usize, usize, usize) {
    let s = t.shape();
    assert!(s.len() >= 2, "image transforms need at least two axes");
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    (t.len() / (h * w).max(1), h, w)
}

pub fn flip_horizontal<T: Real>(t: &Tensor<T>) -> Tensor<T> {
    let (_, _, w) = planes(t);
    let data = t.data().chunks(w).flat_map(|row| row.iter().rev().copied()).collect();
    Tensor::new(t.shape().to_vec(), data).expect("same shape")
}

/// Counter-clockwise quarter turn: out[i][j] = in[j][w−1−i].
pub fn rotate90<T: Real>(t: &Tensor<T>) -> Tensor<T> {
    let (n, h, w) = planes(t);
    let mut data = Vec::with_capacity(t.len());
    for p in 0..n {
        let src = &t.data()[p * h * w..][..h * w];
        for i in 0..w {
            for j in 0..h {
                data.push(src[j * w + (w - 1 - i)]);
            }
        }
    }
    let mut shape = t.shape().to_vec();
    let r = shape.len();
    shape.swap(r - 2, r - 1);
    Tensor::new(shape, data).expect("rotated shape")
}

/// An aligned training pair and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample<T> {
    pub hr: Tensor<T>,
    pub lr: Tensor<T>,
    pub source: usize,
    /// Top-left corner of the crop in the source image.
    pub offset: (usize, usize),
    pub transform: Transform,
}

impl<T: Real> TrainSample<T> {
    /// Applies the same geometric transform to both patches.
    pub fn augment(self, t: Transform) -> Self {
        let composed = compose(self.transform, t);
        Self {
            hr: t.apply(&self.hr),
            lr: t.apply(&self.lr),
            transform: composed,
            ..self
        }
    }
}

/// `second ∘ first` as a single transform.
fn compose(first: Transform, second: Transform) -> Transform {
    // flip ∘ rot^k = rot^{-k} ∘ flip
    let turns = if second.hflip {
        (4 - first.quarter_turns) % 4
    } else {
        first.quarter_turns
    };
    Transform::new(first.hflip ^ second.hflip, turns + second.quarter_turns)
}
