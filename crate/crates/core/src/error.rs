//! Error type shared by the data and evaluation modules.

use std::path::PathBuf;

/// Errors produced while loading, transforming, or evaluating corpus data.
#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record at {path}:{line}: {message}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("malformed vocabulary file {path}: {message}")]
    MalformedVocab { path: PathBuf, message: String },

    #[error("dataset too small to split: {size} instances (minimum 10)")]
    DegenerateSplit { size: usize },

    #[error("manifest checksum mismatch for {file}: expected {expected}, found {actual}")]
    ChecksumMismatch {
        file: String,
        expected: String,
        actual: String,
    },

    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    TokenIdOutOfRange { id: u32, vocab_size: usize },

    #[error("prediction set does not cover the test split: {missing} missing, {duplicated} duplicated (first few: {sample:?})")]
    PredictionCoverage {
        missing: usize,
        duplicated: usize,
        sample: Vec<String>,
    },

    #[error("reports were computed on different test splits: {left} vs {right}")]
    SplitMismatch { left: String, right: String },

    #[error("{0}")]
    Invalid(String),
}

impl CoreError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }
}
