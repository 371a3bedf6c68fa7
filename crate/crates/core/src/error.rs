use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the engine reports.
#[derive(Debug, Error)]
pub enum Error {
    /// The file is not an NVF1 file or declares an unsupported layout.
    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    /// The header is valid but the payload does not match it.
    #[error("corrupt file {path}: {msg}")]
    Corrupt { path: PathBuf, msg: String },

    /// Input data violates a documented invariant.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// The input is valid but the operation is undefined for it.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("configuration error for `{key}`: {msg}")]
    Config { key: String, msg: String },

    /// A non-finite value appeared during optimization.
    #[error("numerical failure in stage `{stage}`{}: {msg}", .iteration.map(|i| format!(" at iteration {i}")).unwrap_or_default())]
    Numerical {
        stage: &'static str,
        iteration: Option<usize>,
        msg: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn numerical(stage: &'static str, msg: impl Into<String>) -> Self {
        Error::Numerical {
            stage,
            iteration: None,
            msg: msg.into(),
        }
    }

    /// Tags a numerical failure with the optimization step it happened in.
    pub fn at_iteration(self, iter: usize) -> Self {
        match self {
            Error::Numerical { stage, msg, .. } => Error::Numerical {
                stage,
                iteration: Some(iter),
                msg,
            },
            other => other,
        }
    }
}
