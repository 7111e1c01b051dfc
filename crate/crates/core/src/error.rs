use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("example index {index} out of range for {len} examples")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("precision matrix is not positive definite{}", step_suffix(.step))]
    NotPositiveDefinite { step: Option<u64> },

    #[error("non-finite value in {what}{}", step_suffix(.step))]
    NonFinite { what: &'static str, step: Option<u64> },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("newton solve did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    NoConvergence { iterations: usize, grad_norm: f64 },

    #[error("plot error: {0}")]
    Plot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn step_suffix(step: &Option<u64>) -> String {
    match step {
        Some(s) => format!(" at step {s}"),
        None => String::new(),
    }
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Attach a step index to errors that carry one.
    pub fn at_step(self, step: u64) -> Self {
        match self {
            Error::NotPositiveDefinite { .. } => Error::NotPositiveDefinite { step: Some(step) },
            Error::NonFinite { what, .. } => Error::NonFinite { what, step: Some(step) },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
