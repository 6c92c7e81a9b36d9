use thiserror::Error;

use crate::checkpoint::CheckpointError;
use crate::imaging::ImageError;
use crate::params::ParamError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },
    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: TensorError,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// The operation that produced a non-finite value, when that is the
    /// failure.
    pub fn non_finite_op(&self) -> Option<&'static str> {
        match self {
            Error::Tensor(TensorError::NonFinite { op })
            | Error::Stage {
                source: TensorError::NonFinite { op },
                ..
            } => Some(op),
            _ => None,
        }
    }

    /// Process exit status: 2 configuration, 3 data, 4 numeric abort.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Diverged { .. } => 4,
            e if e.non_finite_op().is_some() => 4,
            Error::Image(_) | Error::Checkpoint(_) | Error::Param(ParamError::NonFinite(_)) => 3,
            Error::Config(_) | Error::Param(_) | Error::Tensor(_) | Error::Stage { .. } => 2,
        }
    }
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Attaches a stage name to tensor errors raised inside a network stage.
pub(crate) trait StageContext<T> {
    fn stage(self, name: impl FnOnce() -> String) -> Result<T>;
}

impl<T> StageContext<T> for std::result::Result<T, TensorError> {
    fn stage(self, name: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|source| Error::Stage { stage: name(), source })
    }
}
