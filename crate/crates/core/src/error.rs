//! Error types shared by all solver modules.

use std::fmt;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Failure modes of construction, validation and solving.
#[derive(Debug, Clone)]
pub enum Error {
    /// Caller passed inconsistent arguments (dimension mismatch, bad range).
    InvalidArgument(String),
    /// Input data violates a structural invariant (loss of coercivity,
    /// rank-deficient coupling, empty boundary part, ...).
    Validation(String),
    /// An iterative solver failed to converge; carries the last residual.
    Solver { context: String, residual: f64 },
    /// Operation requires a kernel kind the given kernel does not have.
    UnsupportedKernel(&'static str),
    /// Mesh file could not be parsed; `line` is 1-based.
    ParseMesh { line: usize, message: String },
    /// Underlying I/O failure (mesh files, output artifacts).
    Io(String),
    /// Forward solve inside a cost evaluation failed.
    CostEvaluation(String),
}

impl Error {
    pub(crate) fn dim(context: &str, expected: usize, got: usize) -> Self {
        Error::InvalidArgument(format!(
            "{context}: dimension mismatch (expected {expected}, got {got})"
        ))
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::Validation(msg) => write!(f, "validation failed: {msg}"),
            Error::Solver { context, residual } => {
                write!(f, "solver failed: {context} (last residual {residual:.3e})")
            }
            Error::UnsupportedKernel(msg) => write!(f, "unsupported kernel: {msg}"),
            Error::ParseMesh { line, message } => {
                write!(f, "mesh parse error at line {line}: {message}")
            }
            Error::Io(msg) => write!(f, "i/o error: {msg}"),
            Error::CostEvaluation(msg) => write!(f, "cost evaluation failed: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
