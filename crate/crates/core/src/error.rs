use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("render error: unresolved placeholder `{placeholder}` in template {template_id}")]
    UnresolvedPlaceholder { template_id: String, placeholder: String },

    #[error("tokenizer error ({context}): {message}")]
    Tokenizer { context: String, message: String },

    #[error("scorer contract violation: {0}")]
    Contract(String),

    #[error("malformed shard: {0}")]
    Shard(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input (as opposed to internal failures).
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Contract(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
