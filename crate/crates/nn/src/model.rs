//! Shared model contract: configs, the `PatchModel` trait both generators
//! implement, and special-token wiring.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use apr_core::tokenizer::Vocab;

use crate::data::RepairPair;
use crate::params::{Grads, ParamSet};
use crate::{NnError, Result};

/// Where encoder weights come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderSource {
    /// Random initialization at desk scale.
    Toy,
    /// A converted encoder checkpoint: a filesystem path or a registry id
    /// resolved against the model cache directory (`APR_ENCODER_CACHE`).
    Pretrained(String),
}

/// Transformer patch-generator configuration.
///
/// Defaults follow the published setup: a 12-layer pretrained-style encoder
/// with a 6-layer, 768-dimensional, 12-head decoder and beam size 5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder_source: EncoderSource,
    pub vocab_size: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub hidden_dim: usize,
    pub attention_heads: usize,
    /// Feed-forward inner width; defaults to 4x hidden.
    pub ffn_dim: Option<usize>,
    pub max_source_len: usize,
    pub max_target_len: usize,
    pub beam_size: usize,
    pub tie_embeddings: bool,
    pub dropout: f64,
    pub init_seed: u64,
}

impl ModelConfig {
    pub fn paper_default(vocab_size: usize) -> Self {
        ModelConfig {
            encoder_source: EncoderSource::Toy,
            vocab_size,
            encoder_layers: 12,
            decoder_layers: 6,
            hidden_dim: 768,
            attention_heads: 12,
            ffn_dim: None,
            max_source_len: 512,
            max_target_len: 512,
            beam_size: 5,
            tie_embeddings: true,
            dropout: 0.0,
            init_seed: 0,
        }
    }

    /// Desk-scale configuration small enough to gradient-check and overfit.
    pub fn toy(vocab_size: usize) -> Self {
        ModelConfig {
            encoder_source: EncoderSource::Toy,
            vocab_size,
            encoder_layers: 2,
            decoder_layers: 2,
            hidden_dim: 32,
            attention_heads: 4,
            ffn_dim: None,
            max_source_len: 64,
            max_target_len: 64,
            beam_size: 5,
            tie_embeddings: true,
            dropout: 0.0,
            init_seed: 0,
        }
    }

    pub fn ffn_width(&self) -> usize {
        self.ffn_dim.unwrap_or(4 * self.hidden_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim % self.attention_heads != 0 {
            return Err(NnError::Config(format!(
                "hidden_dim {} not divisible by attention_heads {}",
                self.hidden_dim, self.attention_heads
            )));
        }
        if self.beam_size == 0 {
            return Err(NnError::Config("beam_size must be >= 1".into()));
        }
        if self.vocab_size == 0 {
            return Err(NnError::Config("vocab_size must be positive".into()));
        }
        if self.encoder_layers == 0 || self.decoder_layers == 0 {
            return Err(NnError::Config("layer counts must be positive".into()));
        }
        if self.max_source_len < 3 || self.max_target_len < 3 {
            return Err(NnError::Config("sequence limits must be >= 3".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NnError::Config("dropout must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Recurrent baseline configuration: bidirectional LSTM encoder, LSTM
/// decoder with global attention, no copy mechanism and no abstraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub max_source_len: usize,
    pub max_target_len: usize,
    pub beam_size: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub max_steps: usize,
    pub validation_every: usize,
    pub init_seed: u64,
}

impl BaselineConfig {
    pub fn paper_default(vocab_size: usize) -> Self {
        BaselineConfig {
            vocab_size,
            embedding_dim: 128,
            hidden_dim: 256,
            max_source_len: 512,
            max_target_len: 512,
            beam_size: 5,
            batch_size: 32,
            dropout: 0.3,
            max_steps: 20_000,
            validation_every: 1_000,
            init_seed: 0,
        }
    }

    pub fn toy(vocab_size: usize) -> Self {
        BaselineConfig {
            vocab_size,
            embedding_dim: 32,
            hidden_dim: 64,
            max_source_len: 64,
            max_target_len: 64,
            beam_size: 5,
            batch_size: 8,
            dropout: 0.0,
            max_steps: 2_000,
            validation_every: 200,
            init_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.embedding_dim == 0 || self.hidden_dim == 0 {
            return Err(NnError::Config("dimensions must be positive".into()));
        }
        if self.beam_size == 0 || self.batch_size == 0 {
            return Err(NnError::Config("beam/batch sizes must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NnError::Config("dropout must be in [0, 1)".into()));
        }
        if self.validation_every > self.max_steps {
            return Err(NnError::Config(
                "validation_every must not exceed max_steps".into(),
            ));
        }
        Ok(())
    }
}

/// Special-token ids a generator needs at decode time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpecials {
    /// Decoder start token (the sequence opener, CLS).
    pub bos: u32,
    /// End-of-generation token (the framing EOS).
    pub eos: u32,
}

impl GeneratorSpecials {
    pub fn from_vocab(vocab: &Vocab) -> Self {
        let specials = vocab.specials();
        GeneratorSpecials {
            bos: specials.cls,
            eos: specials.eos,
        }
    }
}

/// Which family a checkpoint holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Transformer,
    Baseline,
}

/// Loss value with per-token statistics over a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossStats {
    /// Mean token-level cross-entropy over non-padding target positions.
    pub loss: f64,
    pub token_count: usize,
    /// Teacher-forced argmax hits, for the training log.
    pub correct_tokens: usize,
}

/// Encoder outputs cached for repeated decode steps on one source.
pub struct SourceCache {
    pub matrices: Vec<Array2<f64>>,
}

/// The shared generator contract. Training, beam search, prediction, and
/// evaluation all program against this, so the transformer and the
/// baseline are interchangeable everywhere downstream.
pub trait PatchModel {
    fn kind(&self) -> ModelKind;
    fn tag(&self) -> &'static str;
    fn vocab_size(&self) -> usize;
    fn specials(&self) -> GeneratorSpecials;
    fn beam_size(&self) -> usize;
    fn max_source_len(&self) -> usize;
    fn max_target_len(&self) -> usize;
    fn vocab_hash(&self) -> &str;

    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;

    /// Teacher-forced mean cross-entropy (no gradients, no dropout).
    fn loss(&self, batch: &[RepairPair]) -> Result<LossStats>;

    /// Loss plus parameter gradients; `dropout_seed` enables the model's
    /// configured dropout with a deterministic mask stream.
    fn loss_grads(
        &self,
        batch: &[RepairPair],
        dropout_seed: Option<u64>,
    ) -> Result<(LossStats, Grads)>;

    /// Run the encoder once for a source sequence.
    fn encode_source(&self, source: &[u32]) -> SourceCache;

    /// Log-probabilities of the next token given the decoder prefix
    /// (prefix starts with BOS).
    fn next_log_probs(&self, cache: &SourceCache, prefix: &[u32]) -> Vec<f64>;

    /// Serialized config for checkpoints and provenance.
    fn config_json(&self) -> serde_json::Value;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_matches_published_setup() {
        let config = ModelConfig::paper_default(50_265);
        assert_eq!(config.decoder_layers, 6);
        assert_eq!(config.hidden_dim, 768);
        assert_eq!(config.attention_heads, 12);
        assert_eq!(config.beam_size, 5);
        assert_eq!(config.max_source_len, 512);
        assert_eq!(config.ffn_width(), 3072);
        config.validate().unwrap();
    }

    #[test]
    fn indivisible_heads_is_a_config_error() {
        let mut config = ModelConfig::paper_default(1000);
        config.attention_heads = 5;
        assert!(matches!(config.validate(), Err(NnError::Config(_))));
    }

    #[test]
    fn baseline_defaults_match_published_setup() {
        let config = BaselineConfig::paper_default(1000);
        assert_eq!(config.beam_size, 5);
        assert_eq!(config.batch_size, 32);
        assert!((config.dropout - 0.3).abs() < 1e-12);
        assert_eq!(config.max_steps, 20_000);
        assert_eq!(config.validation_every, 1_000);
        config.validate().unwrap();
    }
}
