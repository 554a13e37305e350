//! Error type shared by all modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GocorError {
    /// Incompatible shapes between operands.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// An input contained NaN or infinity.
    #[error("non-finite value in {context} at flat index {index}")]
    NonFinite { context: &'static str, index: usize },

    /// An input that must be non-empty was empty (e.g. no valid flow pixels).
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// Parameter outside its documented domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A requested index was out of bounds.
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    /// Scene generation could not satisfy the requested geometry.
    #[error("geometry infeasible: {0}")]
    GeometryInfeasible(String),
}

pub type Result<T> = std::result::Result<T, GocorError>;
