//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A file could not be parsed. `offset` is the byte offset of the first
    /// offending character within the file.
    #[error("parse error in {file} at byte {offset}: {message}")]
    Parse {
        file: PathBuf,
        offset: usize,
        message: String,
    },

    /// An in-memory invariant was violated while loading or constructing data.
    #[error("validation error in scene '{scene_id}'{}: {message}", fmt_instance(.instance_id))]
    Validation {
        scene_id: String,
        instance_id: Option<u32>,
        message: String,
    },

    /// Mismatched grid or vector dimensions between two operands.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Invalid configuration or hyperparameter value.
    #[error("config error: {0}")]
    Config(String),

    /// An operation was invoked on a model in the wrong state (untrained,
    /// routing unfilled, missing artifact).
    #[error("model state error: {0}")]
    ModelState(String),

    /// Invalid operation input (empty slices, out-of-range arguments).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn fmt_instance(instance_id: &Option<u32>) -> String {
    match instance_id {
        Some(id) => format!(", instance {id}"),
        None => String::new(),
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn validation(scene_id: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            scene_id: scene_id.into(),
            instance_id: None,
            message: message.into(),
        }
    }

    pub fn validation_instance(
        scene_id: impl Into<String>,
        instance_id: u32,
        message: impl Into<String>,
    ) -> Self {
        Error::Validation {
            scene_id: scene_id.into(),
            instance_id: Some(instance_id),
            message: message.into(),
        }
    }

    /// Stable machine-readable category, used by the CLI on stderr.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Validation { .. } => "validation",
            Error::Dimension(_) => "dimension",
            Error::Config(_) => "config",
            Error::ModelState(_) => "model_state",
            Error::InvalidInput(_) => "invalid_input",
            Error::Io { .. } => "io",
        }
    }
}
