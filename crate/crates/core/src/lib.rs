//! Data and evaluation layer for the single-statement repair pipeline.
//!
//! This crate owns everything that is not a neural network: loading and
//! curating ManySStuBs4J releases into dataset bundles, byte-level BPE
//! tokenization with the encoder's framing convention, prediction file
//! formats, and the exact-match evaluation report with its bug-type,
//! project, length, and novelty breakdowns.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod predictions;
pub mod text;
pub mod tokenizer;

pub use error::CoreError;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, CoreError>;
