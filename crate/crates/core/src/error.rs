use thiserror::Error;

/// Errors raised across the simulation and correction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("object leaves the field of view: {0}")]
    OutsideFov(String),
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error("degenerate navigator model (condition number {0:.3e})")]
    DegenerateModel(f64),
    #[error("trajectory ordering differs from the reference volume at shot {shot}")]
    OrderingMismatch { shot: usize },
    #[error("volume {volume} is missing k-space planes {missing:?}")]
    MissingPlanes { volume: usize, missing: Vec<usize> },
    #[error("malformed data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(what: &str, values: impl IntoIterator<Item = f64>) -> Result<()> {
    if values.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}
