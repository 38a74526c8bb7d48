use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("time grids differ: {left} vs {right} steps")]
    GridMismatch { left: usize, right: usize },

    #[error("path must start at the identity, found ({x}, {y}, {z})")]
    NotAtIdentity { x: f64, y: f64, z: f64 },

    #[error("path is not horizontal: vertical residual {residual:e} at step {step} exceeds {tolerance:e}")]
    NotHorizontal { step: usize, residual: f64, tolerance: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("tube estimate for epsilon = {epsilon} produced zero hits over {samples} samples")]
    ZeroHits { epsilon: f64, samples: usize },

    #[error(
        "optimizer did not reach endpoint tolerance after {iterations} iterations (endpoint error {endpoint_error:e})"
    )]
    NotConverged { iterations: usize, endpoint_error: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed csv: {0}")]
    Csv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
