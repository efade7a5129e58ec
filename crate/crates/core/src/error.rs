use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SnnError {
    #[error("invalid configuration: `{field}` {reason}")]
    Config { field: String, reason: String },

    #[error("numerical fault in layer {layer}, neuron {neuron}: {what}")]
    Fault {
        layer: &'static str,
        neuron: usize,
        what: String,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("IDX parse error at byte {offset}: {reason}")]
    Idx { offset: usize, reason: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("digest mismatch for {path}: expected {expected}, got {actual}")]
    Digest {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error("checkpoint rejected: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SnnError {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        SnnError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SnnError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, SnnError>;
