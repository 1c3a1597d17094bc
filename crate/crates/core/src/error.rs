use thiserror::Error;

/// Errors raised by the channel, beamforming and optimization layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("distance must be positive, got {0} m")]
    NonPositiveDistance(f64),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("linear system is singular: {0}")]
    Singular(&'static str),

    #[error(
        "I - V_{ap} is not positive definite (min eigenvalue {min_eigenvalue:e}) after {samples} samples"
    )]
    NotPositiveDefinite {
        ap: usize,
        min_eigenvalue: f64,
        samples: usize,
    },

    #[error("iterate became non-finite at iteration {iteration} ({what})")]
    Diverged {
        iteration: usize,
        what: &'static str,
    },

    #[error("failed to parse scenario file: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
