//! FGMamba: a compact super-resolution network built from gated-attention
//! selective-scan blocks and pyramid frequency fusion, together with the
//! tensor engine, optimizer, resampling and metrics it needs.

pub mod attention;
pub mod autodiff;
pub mod error;
pub mod model;
pub mod ops;
pub mod params;
pub mod real;
pub mod spectral;
pub mod ssm;
pub mod tensor;
pub mod testing;
pub mod training;

pub use autodiff::{BackwardRule, OpKind, Tape, Var};
pub use error::{Error, Result};
pub use real::Real;
pub use tensor::{Tensor, TensorError};
