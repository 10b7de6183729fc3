use thiserror::Error;

/// Errors raised by calibration, estimation and the experiment harness.
#[derive(Debug, Error)]
pub enum SisError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The pilot data carry no usable information, e.g. every knot estimate is zero.
    #[error("no signal: {0}")]
    NoSignal(String),

    #[error("calibration failed: {0}")]
    CalibrationFailed(String),

    /// The proposal assigns zero density to a point where the base density is positive.
    #[error("support violation at t = {t}: proposal density is zero where the base density is not")]
    SupportViolation { t: f64 },

    #[error("ill-conditioned: {0}")]
    IllConditioned(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, SisError>;

impl SisError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        SisError::InvalidArgument(msg.into())
    }
}

impl From<toml::de::Error> for SisError {
    fn from(e: toml::de::Error) -> Self {
        SisError::Parse(e.to_string())
    }
}

impl From<toml::ser::Error> for SisError {
    fn from(e: toml::ser::Error) -> Self {
        SisError::Parse(e.to_string())
    }
}

impl From<csv::Error> for SisError {
    fn from(e: csv::Error) -> Self {
        SisError::Parse(e.to_string())
    }
}
