use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("rotation axis is not a unit vector (|n| = {norm})")]
    NonUnitAxis { norm: f64 },

    #[error("singular point: {0}")]
    Singular(String),

    #[error("no analytic indicatrix for this trajectory ({0}); use the numeric fallback or a constant override")]
    NoAnalyticIndicatrix(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("point {index} lies outside the representable band (|x| = {value:.6} > pi)")]
    OutOfBand { index: usize, value: f64 },

    #[error("dimension mismatch: {0}")]
    Mismatch(String),

    #[error("support violation: {0}")]
    Support(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
