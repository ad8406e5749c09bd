use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("non-finite entry in {0}")]
    NotFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("closed loop is not gamma-stable (sqrt(gamma)*rho = {scaled_radius:.6})")]
    Infeasible { scaled_radius: f64 },

    #[error("numerical failure in {context} (residual {residual:.3e})")]
    Numerical {
        context: &'static str,
        residual: f64,
    },

    #[error("value outside domain: {0}")]
    Domain(String),

    #[error("degenerate instance: {0}")]
    Degenerate(String),

    #[error("Riccati iteration did not contract within {iterations} iterations")]
    NonStabilizable { iterations: usize },

    #[error("estimation failed: {diverged} of {total} rollouts diverged")]
    EstimationFailure { diverged: usize, total: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("study failed: {0}")]
    Study(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
