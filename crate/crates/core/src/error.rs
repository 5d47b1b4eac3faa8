use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value outside the domain of an operation (non-positive log argument, bad parameter).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("missing price for token {0}")]
    MissingPrice(String),

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("swap infeasible: {0}")]
    InfeasibleSwap(String),

    #[error("no depegs in training slice")]
    NoLabels,

    #[error("{file}:{line}: {message}")]
    Row { file: String, line: u64, message: String },

    #[error("offline: supply prices.csv (token {token} is sourced from {provider})")]
    Offline { token: String, provider: String },

    #[error("detector state version {found} is not supported (expected {expected})")]
    StateVersion { found: u32, expected: u32 },

    #[error("digest mismatch for {0}")]
    DigestMismatch(PathBuf),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for data validation problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NoConvergence { .. } | Error::InfeasibleSwap(_) => 3,
            _ => 2,
        }
    }
}
