use thiserror::Error;

use crate::ply::PlyError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty cloud")]
    EmptyCloud,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid cloud: {0}")]
    InvalidCloud(String),

    #[error("non-finite query point")]
    NonFiniteQuery,

    #[error("invalid transform: {0}")]
    InvalidTransform(String),

    #[error("insufficient correspondences: need at least 3, got {0}")]
    InsufficientCorrespondences(usize),

    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(&'static str),

    #[error("correspondence starvation at iteration {iteration}: {count} pairs within bound")]
    CorrespondenceStarvation { iteration: usize, count: usize },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("scene config: {0}")]
    Config(String),

    #[error(transparent)]
    Ply(#[from] PlyError),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
