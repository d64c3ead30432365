use std::io;

use thiserror::Error;

/// Errors produced by the simulation, reconstruction and evaluation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} = {value} is outside the valid range {range}")]
    OutOfRange {
        what: &'static str,
        value: f64,
        range: String,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("flux {flux} photons/s saturates the detector (limit {limit} photons/s)")]
    Saturation { flux: f64, limit: f64 },

    #[error("out-of-order timestamp: {t} precedes {prev}")]
    Ordering { t: f64, prev: f64 },

    #[error("need {needed} binary frames, only {available} available")]
    Underflow { needed: usize, available: usize },

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("solver failed: {0}")]
    Solver(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn out_of_range(what: &'static str, value: f64, range: impl Into<String>) -> Self {
        Error::OutOfRange {
            what,
            value,
            range: range.into(),
        }
    }
}
