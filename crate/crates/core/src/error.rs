use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("decision library is empty")]
    EmptyLibrary,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("temperature calibration failed: {0}")]
    Calibration(String),

    #[error("all {restarts} restarts of {method} diverged")]
    Diverged { method: String, restarts: usize },

    #[error("EM objective decreased by {decrease:.3e} at round {round}")]
    EmNotMonotone { round: usize, decrease: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
