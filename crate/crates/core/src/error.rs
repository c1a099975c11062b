use thiserror::Error;

/// Errors raised by the library. Degenerate-but-valid outcomes (an empty focal
/// set, an empty treatment arm) are reported through [`crate::TestReport`]
/// rather than here.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("assignment path is not blockwise constant: period {period} differs from the start of its block")]
    NotBlockwiseConstant { period: usize },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("no admissible section: horizon {horizon} is shorter than m + 1 = {needed}")]
    NoAdmissibleSection { horizon: usize, needed: usize },

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("i/o error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
