use thiserror::Error;

/// Errors raised by the link model, sensing and optimization routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("constraint violation: {0}")]
    ConstraintViolation(String),

    #[error("rank deficiency: {0}")]
    RankDeficient(String),

    #[error("noise subspace exhausted: {targets} targets need more than {dims} combined dimensions")]
    SubspaceExhausted { targets: usize, dims: usize },

    #[error("degenerate reference signal for DoA {doa_rad} rad")]
    DegenerateReference { doa_rad: f64 },

    #[error("degenerate noise: interference-plus-noise power is zero")]
    DegenerateNoise,

    #[error("serialization: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
