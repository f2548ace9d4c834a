//! Error type for model construction, training, and checkpointing.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("pretrained encoder checkpoint unavailable at {path} (retryable: {retryable}): {message}")]
    CheckpointUnavailable {
        path: String,
        retryable: bool,
        message: String,
    },

    #[error("checkpoint i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("checkpoint format error in {path}: {message}")]
    CheckpointFormat { path: PathBuf, message: String },

    #[error("checkpoint version {found} unsupported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("shape mismatch loading {name}: checkpoint {found:?}, model {expected:?}")]
    ShapeMismatch {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },

    #[error("vocabulary hash mismatch: checkpoint {checkpoint}, current {current}")]
    VocabHashMismatch { checkpoint: String, current: String },

    #[error("non-finite loss at step {step}; diagnostic snapshot at {snapshot}")]
    NonFiniteLoss { step: usize, snapshot: String },

    #[error("empty batch")]
    EmptyBatch,

    #[error(transparent)]
    Core(#[from] apr_core::CoreError),
}
