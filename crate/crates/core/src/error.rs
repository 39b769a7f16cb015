use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("could not place {clusters} unit vectors in R^{dim} with pairwise gap {gamma} after {attempts} attempts")]
    InfeasibleSeparation {
        clusters: usize,
        dim: usize,
        gamma: f64,
        attempts: usize,
    },

    #[error("unknown user id {0}")]
    UnknownUser(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("arm index {index} out of range for an arm set of {len}")]
    ArmNotInSet { index: usize, len: usize },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{0}")]
    Feature(String),

    #[error("matrix is not positive definite ({0})")]
    NotPositiveDefinite(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("zero vector cannot be normalized")]
    ZeroInput,

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Configuration errors map to exit code 2, everything else to 3.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::InfeasibleSeparation { .. } | Error::Parse { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
