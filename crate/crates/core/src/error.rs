use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape {height}x{width}: {reason}")]
    InvalidShape {
        height: usize,
        width: usize,
        reason: &'static str,
    },

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("non-finite sample at index {0}")]
    NonFinite(usize),

    #[error("invalid shift ({dy}, {dx}): {reason}")]
    InvalidShift { dy: i64, dx: i64, reason: String },

    #[error("duplicate shift ({dy}, {dx})")]
    DuplicateShift { dy: i64, dx: i64 },

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unachievable SNR: {0}")]
    UnachievableSnr(String),

    #[error("missing quadrature frame for shift {shift}, q={quadrature}")]
    MissingQuadrature { shift: usize, quadrature: usize },

    #[error("zero reference amplitude")]
    ZeroReference,

    #[error("reference pixel ({row}, {col}) has no valid phasor edge")]
    InvalidReference { row: usize, col: usize },

    #[error("empty mask")]
    EmptyMask,

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
