use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid fractional order {alpha}: must lie in ({lo}, {hi})")]
    InvalidOrder { alpha: f64, lo: f64, hi: f64 },

    #[error("fBm generation failed: {0}")]
    GenerationFailed(String),

    #[error("step rejected: CFL number {cfl:.3} exceeds {limit}; retry with dt <= {suggested_dt:.3e}")]
    StepRejected { cfl: f64, limit: f64, suggested_dt: f64 },

    #[error("trajectory diverged at t = {t}")]
    Diverged { t: f64 },

    #[error("basis mismatch: {0}")]
    BasisMismatch(String),

    #[error("experiment aborted: {0}")]
    ExperimentAborted(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
