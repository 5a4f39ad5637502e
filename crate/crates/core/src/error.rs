use thiserror::Error;

/// Errors reported by the core crate.
///
/// Every fallible operation in this crate returns [`Result`]. Validation
/// failures name the offending field or quantity in the message so callers
/// (and the CLI) can surface something actionable.
#[derive(Debug, Error)]
pub enum Error {
    /// A tensor, parameter vector, or measure has a shape that the operation
    /// cannot accept (mismatched dimensions, wrong rank, ...).
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// An argument violates a documented precondition. The message names the
    /// field that failed validation.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A NaN or infinity appeared where finite arithmetic is required.
    /// Optimizer state is left untouched when this is raised, so the caller
    /// can abort with a report instead of training on poisoned values.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A text record could not be parsed. `line` is 1-based and counts the
    /// header.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
