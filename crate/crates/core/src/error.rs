use std::io;

use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration; `path` names the offending field.
    #[error("configuration error at `{path}`: {msg}")]
    Config { path: String, msg: String },

    /// Operands live on different tori or have inconsistent sizes.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A call argument is outside the operation's domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Non-finite or otherwise unusable numeric value.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// The solver produced non-finite values.
    #[error("blow-up at step {step} (t = {time})")]
    BlowUp { step: usize, time: f64 },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
