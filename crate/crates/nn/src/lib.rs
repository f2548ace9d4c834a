//! Neural patch generation: a transformer encoder-decoder, a recurrent
//! attention baseline, shared beam-search decoding, and the fine-tuning
//! loop with early stopping.
//!
//! Everything runs in f64 on the CPU through a small reverse-mode tape, so
//! analytic gradients can be checked against central finite differences at
//! tight tolerances and toy models train deterministically from a seed.

pub mod adam;
pub mod beam;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod lstm;
pub mod model;
pub mod params;
pub mod tape;
pub mod train;
pub mod transformer;

pub use beam::{beam_search, greedy_decode, Candidate};
pub use data::RepairPair;
pub use error::NnError;
pub use model::{BaselineConfig, EncoderSource, ModelConfig, PatchModel, SourceCache};

pub type Result<T> = std::result::Result<T, NnError>;
