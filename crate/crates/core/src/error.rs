use std::fmt;

use thiserror::Error;

/// A `rows x cols` pair, used to make dimension errors readable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape(pub usize, pub usize);

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.0, self.1)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left} vs {right}")]
    Dimension {
        op: &'static str,
        left: Shape,
        right: Shape,
    },

    #[error("state error: {0}")]
    State(String),

    #[error("invalid config at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("episode error: {0}")]
    Episode(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("non-finite {what} during {phase} at epoch {epoch}, step {step}")]
    Numerical {
        phase: &'static str,
        what: String,
        epoch: usize,
        step: usize,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn dims(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::Dimension {
            op,
            left: Shape(left.0, left.1),
            right: Shape(right.0, right.1),
        }
    }
}
