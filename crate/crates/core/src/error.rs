use std::io;

/// Errors raised by the motiontok library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("degenerate projection: joint {joint} in frame {frame} has depth {depth}")]
    DegenerateProjection { frame: usize, joint: usize, depth: f64 },

    #[error("wrong coordinate space: expected {expected}, got {actual}")]
    CoordinateSpace {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("parse error at token {position}: {message}")]
    Parse { position: usize, message: String },

    #[error("context overflow: need {needed} positions, model allows {limit}")]
    ContextOverflow { needed: usize, limit: usize },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
