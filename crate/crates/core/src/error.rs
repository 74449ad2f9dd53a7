use thiserror::Error;

use crate::signal::SparseActivation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("value outside its domain: {0}")]
    Domain(String),

    /// The inner solver hit its iteration cap.
    #[error("inner solver did not converge after {iterations} iterations (KKT deviation {deviation:.3e}, residual norm {residual_norm:.3e})")]
    Convergence {
        iterations: usize,
        deviation: f64,
        residual_norm: f64,
        last: Box<SparseActivation>,
    },

    /// An outer loop exceeded its configured budget. `partial` holds the
    /// solution reached so far.
    #[error("budget exceeded: {reason}")]
    Budget {
        reason: String,
        partial: Box<SparseActivation>,
    },

    #[error("capacity: {0}")]
    Capacity(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("in window [{start}, {end}): {source}")]
    InWindow {
        start: usize,
        end: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("in cluster {cluster}: {source}")]
    InCluster {
        cluster: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Strips window/cluster context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::InWindow { source, .. } | Error::InCluster { source, .. } => source.root(),
            other => other,
        }
    }
}
