use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("parameter `{0}` is not bound")]
    MissingParameter(String),
    #[error("parameter `{name}` has shape {actual:?}, expected {expected:?}")]
    ParameterShape {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("no gradient for tracked parameter `{0}`")]
    MissingGradient(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
