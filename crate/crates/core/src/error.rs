use heightbins_tensor::{CheckpointError, TensorError};
use thiserror::Error;

use crate::synth::raster::RasterError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("data: {0}")]
    Data(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("gradient check failed: {0}")]
    Gradcheck(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(vec![msg.into()])
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) => 2,
            Error::Data(_) | Error::Raster(_) | Error::Io(_) | Error::Checkpoint(_) => 3,
            Error::Numeric(_) => 4,
            Error::Tensor(TensorError::NonFiniteGradient(_)) => 4,
            Error::Tensor(TensorError::Domain { .. }) => 4,
            Error::Tensor(_) => 2,
            Error::Gradcheck(_) => 5,
        }
    }

    /// Stable short code, used in the one-line error record.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Json(_) => "config_json",
            Error::Data(_) => "data",
            Error::Raster(e) => e.code(),
            Error::Io(_) => "io",
            Error::Checkpoint(_) => "checkpoint",
            Error::Numeric(_) => "non_finite",
            Error::Tensor(TensorError::NonFiniteGradient(_)) => "non_finite_gradient",
            Error::Tensor(TensorError::Domain { .. }) => "domain",
            Error::Tensor(_) => "contract",
            Error::Gradcheck(_) => "gradcheck",
        }
    }
}
