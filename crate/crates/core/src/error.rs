use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// An operation needs a capability (exact prox, Hessian, ...) the model
    /// does not provide.
    #[error("missing capability: {0}")]
    Capability(&'static str),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value at iteration {k}")]
    NonFinite { k: usize },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("point outside the domain: {0}")]
    Domain(String),

    #[error("subsolver did not converge after {iters} iterations (gap {gap:e})")]
    Unconverged { gap: f64, iters: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed data: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
