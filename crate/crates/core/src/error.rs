use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),

    #[error("point is behind the camera (depth {depth})")]
    BehindCamera { depth: f64 },

    #[error("disparity {0} yields infinite depth; clamp to a positive minimum first")]
    InfiniteDepth(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: String, got: String },

    #[error("no valid pixels in {0}")]
    DegenerateMask(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {component}")]
    NonFinite { component: String },

    #[error("ray does not intersect any scene plane at pixel ({u}, {v})")]
    NoIntersection { u: usize, v: usize },

    #[error("alignment is underdetermined: need at least 3 poses, got {0}")]
    AlignmentUnderdetermined(usize),

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed {format}: {reason}")]
    Format { format: &'static str, reason: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn dims(expected: impl ToString, got: impl ToString) -> Self {
        Error::Dimension {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
