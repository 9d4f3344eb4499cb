use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Inputs are well-formed but carry no usable signal (zero total power,
    /// every eigenvalue below the inversion threshold, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Structural problems with user input: mismatched lengths, unsorted
    /// spectra, invalid plans.
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("solver did not converge after {iterations} iterations (last residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Quadrature or tail estimates failed to reach the requested precision.
    #[error("precision error: {0}")]
    Precision(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// True for failures caused by the numbers themselves rather than by
    /// malformed input or the filesystem.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NoConvergence { .. } | Error::Numerical(_) | Error::Precision(_)
        )
    }
}
