use std::fmt;

/// Errors raised anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand shapes are incompatible for an operation.
    #[error("dimension error in `{op}`: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// A documented precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A NaN or infinity showed up where a finite value is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("retarget error: {0}")]
    Retarget(String),

    #[error("feature extraction error: {0}")]
    Extraction(String),

    /// A clip length or layout the network cannot consume.
    #[error("shape error: {0}")]
    Shape(String),

    /// Malformed binary or text file (bad magic, version, truncated payload).
    #[error("format error: {0}")]
    Format(String),

    /// A body part refers to a style source that cannot be found.
    #[error("unresolved style source: {0}")]
    Resolution(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl fmt::Display) -> Self {
        Error::Dimension {
            op,
            detail: detail.to_string(),
        }
    }
}
