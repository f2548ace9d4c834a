//! Transformer patch generator: pretrained-style bidirectional encoder with
//! a randomly initialized transformer decoder and a (tied) LM head.

use ndarray::Array2;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use apr_core::tokenizer::Vocab;

use crate::checkpoint;
use crate::data::RepairPair;
use crate::model::{
    EncoderSource, GeneratorSpecials, LossStats, ModelConfig, ModelKind, PatchModel, SourceCache,
};
use crate::params::{normal_init, Grads, ParamId, ParamSet};
use crate::tape::{log_softmax_row, Tape, Var};
use crate::{NnError, Result};

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;
const NEG_INF_MASK: f64 = -1e9;

struct AttentionParams {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
}

struct LayerNormParams {
    gamma: ParamId,
    beta: ParamId,
}

struct FfnParams {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

struct EncoderLayer {
    attn: AttentionParams,
    ln1: LayerNormParams,
    ffn: FfnParams,
    ln2: LayerNormParams,
}

struct DecoderLayer {
    self_attn: AttentionParams,
    ln1: LayerNormParams,
    cross_attn: AttentionParams,
    ln2: LayerNormParams,
    ffn: FfnParams,
    ln3: LayerNormParams,
}

/// The encoder-decoder generator.
pub struct TransformerModel {
    config: ModelConfig,
    specials: GeneratorSpecials,
    vocab_hash: String,
    params: ParamSet,
    tok_emb: ParamId,
    enc_pos: ParamId,
    dec_pos: ParamId,
    emb_ln_enc: LayerNormParams,
    emb_ln_dec: LayerNormParams,
    encoder: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
    /// Untied output projection; present only when `tie_embeddings` is off.
    head: Option<(ParamId, ParamId)>,
    out_bias: ParamId,
}

fn add_attention(
    params: &mut ParamSet,
    rng: &mut ChaCha20Rng,
    prefix: &str,
    dim: usize,
) -> AttentionParams {
    AttentionParams {
        wq: params.add(format!("{prefix}.wq"), normal_init(rng, dim, dim, INIT_STD)),
        bq: params.add(format!("{prefix}.bq"), Array2::zeros((1, dim))),
        wk: params.add(format!("{prefix}.wk"), normal_init(rng, dim, dim, INIT_STD)),
        bk: params.add(format!("{prefix}.bk"), Array2::zeros((1, dim))),
        wv: params.add(format!("{prefix}.wv"), normal_init(rng, dim, dim, INIT_STD)),
        bv: params.add(format!("{prefix}.bv"), Array2::zeros((1, dim))),
        wo: params.add(format!("{prefix}.wo"), normal_init(rng, dim, dim, INIT_STD)),
        bo: params.add(format!("{prefix}.bo"), Array2::zeros((1, dim))),
    }
}

fn add_layer_norm(params: &mut ParamSet, prefix: &str, dim: usize) -> LayerNormParams {
    LayerNormParams {
        gamma: params.add(format!("{prefix}.gamma"), Array2::ones((1, dim))),
        beta: params.add(format!("{prefix}.beta"), Array2::zeros((1, dim))),
    }
}

fn add_ffn(
    params: &mut ParamSet,
    rng: &mut ChaCha20Rng,
    prefix: &str,
    dim: usize,
    inner: usize,
) -> FfnParams {
    FfnParams {
        w1: params.add(format!("{prefix}.w1"), normal_init(rng, dim, inner, INIT_STD)),
        b1: params.add(format!("{prefix}.b1"), Array2::zeros((1, inner))),
        w2: params.add(format!("{prefix}.w2"), normal_init(rng, inner, dim, INIT_STD)),
        b2: params.add(format!("{prefix}.b2"), Array2::zeros((1, dim))),
    }
}

impl TransformerModel {
    /// Build from a config and the shared vocabulary.
    ///
    /// With `EncoderSource::Pretrained`, encoder weights are loaded from a
    /// converted checkpoint (path or cache id); the decoder is always
    /// randomly initialized.
    pub fn build(config: &ModelConfig, vocab: &Vocab) -> Result<TransformerModel> {
        let mut model = Self::build_raw(
            config.clone(),
            GeneratorSpecials::from_vocab(vocab),
            vocab.hash().to_string(),
        )?;
        if vocab.len() != config.vocab_size {
            return Err(NnError::Config(format!(
                "config.vocab_size {} != vocabulary size {}",
                config.vocab_size,
                vocab.len()
            )));
        }
        if let EncoderSource::Pretrained(source) = &config.encoder_source {
            checkpoint::load_pretrained_encoder(&mut model, source)?;
        }
        Ok(model)
    }

    /// Build with explicit special ids; lets tests work with tiny synthetic
    /// vocabularies.
    pub fn build_raw(
        config: ModelConfig,
        specials: GeneratorSpecials,
        vocab_hash: String,
    ) -> Result<TransformerModel> {
        config.validate()?;
        let dim = config.hidden_dim;
        let inner = config.ffn_width();
        let vocab = config.vocab_size;
        let mut rng = ChaCha20Rng::seed_from_u64(config.init_seed);
        let mut params = ParamSet::new();

        let tok_emb = params.add("tok_emb", normal_init(&mut rng, vocab, dim, INIT_STD));
        let enc_pos = params.add(
            "encoder.pos_emb",
            normal_init(&mut rng, config.max_source_len, dim, INIT_STD),
        );
        let dec_pos = params.add(
            "decoder.pos_emb",
            normal_init(&mut rng, config.max_target_len, dim, INIT_STD),
        );
        let emb_ln_enc = add_layer_norm(&mut params, "encoder.emb_ln", dim);
        let emb_ln_dec = add_layer_norm(&mut params, "decoder.emb_ln", dim);

        let encoder = (0..config.encoder_layers)
            .map(|layer| {
                let prefix = format!("encoder.layer{layer}");
                EncoderLayer {
                    attn: add_attention(&mut params, &mut rng, &format!("{prefix}.attn"), dim),
                    ln1: add_layer_norm(&mut params, &format!("{prefix}.ln1"), dim),
                    ffn: add_ffn(&mut params, &mut rng, &format!("{prefix}.ffn"), dim, inner),
                    ln2: add_layer_norm(&mut params, &format!("{prefix}.ln2"), dim),
                }
            })
            .collect();
        let decoder = (0..config.decoder_layers)
            .map(|layer| {
                let prefix = format!("decoder.layer{layer}");
                DecoderLayer {
                    self_attn: add_attention(&mut params, &mut rng, &format!("{prefix}.self"), dim),
                    ln1: add_layer_norm(&mut params, &format!("{prefix}.ln1"), dim),
                    cross_attn: add_attention(
                        &mut params,
                        &mut rng,
                        &format!("{prefix}.cross"),
                        dim,
                    ),
                    ln2: add_layer_norm(&mut params, &format!("{prefix}.ln2"), dim),
                    ffn: add_ffn(&mut params, &mut rng, &format!("{prefix}.ffn"), dim, inner),
                    ln3: add_layer_norm(&mut params, &format!("{prefix}.ln3"), dim),
                }
            })
            .collect();

        let head = if config.tie_embeddings {
            None
        } else {
            Some((
                params.add("head.w", normal_init(&mut rng, dim, vocab, INIT_STD)),
                params.add("head.b", Array2::zeros((1, vocab))),
            ))
        };
        let out_bias = params.add("out_bias", Array2::zeros((1, vocab)));

        Ok(TransformerModel {
            config,
            specials,
            vocab_hash,
            params,
            tok_emb,
            enc_pos,
            dec_pos,
            emb_ln_enc,
            emb_ln_dec,
            encoder,
            decoder,
            head,
            out_bias,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Parameter-count report emitted at build time.
    pub fn parameter_report(&self) -> String {
        format!(
            "transformer: {} tensors, {} parameters ({} encoder layers, {} decoder layers, dim {}, heads {})",
            self.params.len(),
            self.params.total_scalars(),
            self.config.encoder_layers,
            self.config.decoder_layers,
            self.config.hidden_dim,
            self.config.attention_heads,
        )
    }

    fn attention(
        &self,
        tape: &mut Tape,
        queries: Var,
        keys: Var,
        values: Var,
        attn: &AttentionParams,
        mask: Option<Var>,
    ) -> Var {
        let heads = self.config.attention_heads;
        let head_dim = self.config.hidden_dim / heads;
        let scale = 1.0 / (head_dim as f64).sqrt();

        let wq = tape.param(&self.params, attn.wq);
        let bq = tape.param(&self.params, attn.bq);
        let wk = tape.param(&self.params, attn.wk);
        let bk = tape.param(&self.params, attn.bk);
        let wv = tape.param(&self.params, attn.wv);
        let bv = tape.param(&self.params, attn.bv);
        let wo = tape.param(&self.params, attn.wo);
        let bo = tape.param(&self.params, attn.bo);

        let q = tape.matmul(queries, wq);
        let q = tape.add_row(q, bq);
        let k = tape.matmul(keys, wk);
        let k = tape.add_row(k, bk);
        let v = tape.matmul(values, wv);
        let v = tape.add_row(v, bv);

        let mut head_outputs = Vec::with_capacity(heads);
        for head in 0..heads {
            let from = head * head_dim;
            let to = from + head_dim;
            let q_h = tape.slice_cols(q, from, to);
            let k_h = tape.slice_cols(k, from, to);
            let v_h = tape.slice_cols(v, from, to);
            let k_t = tape.transpose(k_h);
            let scores = tape.matmul(q_h, k_t);
            let mut scores = tape.scale(scores, scale);
            if let Some(mask) = mask {
                scores = tape.add(scores, mask);
            }
            let weights = tape.softmax_rows(scores);
            head_outputs.push(tape.matmul(weights, v_h));
        }
        let mut merged = head_outputs[0];
        for &head_out in &head_outputs[1..] {
            merged = tape.concat_cols(merged, head_out);
        }
        let projected = tape.matmul(merged, wo);
        tape.add_row(projected, bo)
    }

    fn ffn(&self, tape: &mut Tape, x: Var, ffn: &FfnParams) -> Var {
        let w1 = tape.param(&self.params, ffn.w1);
        let b1 = tape.param(&self.params, ffn.b1);
        let w2 = tape.param(&self.params, ffn.w2);
        let b2 = tape.param(&self.params, ffn.b2);
        let h = tape.matmul(x, w1);
        let h = tape.add_row(h, b1);
        let h = tape.gelu(h);
        let h = tape.matmul(h, w2);
        tape.add_row(h, b2)
    }

    fn layer_norm(&self, tape: &mut Tape, x: Var, ln: &LayerNormParams) -> Var {
        let gamma = tape.param(&self.params, ln.gamma);
        let beta = tape.param(&self.params, ln.beta);
        tape.layer_norm(x, gamma, beta, LN_EPS)
    }

    fn embed(&self, tape: &mut Tape, ids: &[u32], pos: ParamId, ln: &LayerNormParams) -> Var {
        let table = tape.param(&self.params, self.tok_emb);
        let ids: Vec<usize> = ids.iter().map(|&id| id as usize).collect();
        let tok = tape.embed(table, &ids);
        let pos_table = tape.param(&self.params, pos);
        let pos_rows: Vec<usize> = (0..ids.len()).collect();
        let pos = tape.embed(pos_table, &pos_rows);
        let x = tape.add(tok, pos);
        self.layer_norm(tape, x, ln)
    }

    fn encode_on_tape(&self, tape: &mut Tape, source: &[u32], dropout: &mut Dropout) -> Var {
        let mut x = self.embed(tape, source, self.enc_pos, &self.emb_ln_enc);
        x = dropout.apply(tape, x);
        for layer in &self.encoder {
            let attn_out = self.attention(tape, x, x, x, &layer.attn, None);
            let attn_out = dropout.apply(tape, attn_out);
            let x1 = tape.add(x, attn_out);
            let x1 = self.layer_norm(tape, x1, &layer.ln1);
            let ffn_out = self.ffn(tape, x1, &layer.ffn);
            let ffn_out = dropout.apply(tape, ffn_out);
            let x2 = tape.add(x1, ffn_out);
            x = self.layer_norm(tape, x2, &layer.ln2);
        }
        x
    }

    fn decode_on_tape(
        &self,
        tape: &mut Tape,
        decoder_input: &[u32],
        encoder_out: Var,
        dropout: &mut Dropout,
    ) -> Var {
        let len = decoder_input.len();
        let causal = Array2::from_shape_fn((len, len), |(i, j)| {
            if j > i {
                NEG_INF_MASK
            } else {
                0.0
            }
        });
        let causal = tape.input(causal);

        let mut y = self.embed(tape, decoder_input, self.dec_pos, &self.emb_ln_dec);
        y = dropout.apply(tape, y);
        for layer in &self.decoder {
            let self_out = self.attention(tape, y, y, y, &layer.self_attn, Some(causal));
            let self_out = dropout.apply(tape, self_out);
            let y1 = tape.add(y, self_out);
            let y1 = self.layer_norm(tape, y1, &layer.ln1);

            let cross_out =
                self.attention(tape, y1, encoder_out, encoder_out, &layer.cross_attn, None);
            let cross_out = dropout.apply(tape, cross_out);
            let y2 = tape.add(y1, cross_out);
            let y2 = self.layer_norm(tape, y2, &layer.ln2);

            let ffn_out = self.ffn(tape, y2, &layer.ffn);
            let ffn_out = dropout.apply(tape, ffn_out);
            let y3 = tape.add(y2, ffn_out);
            y = self.layer_norm(tape, y3, &layer.ln3);
        }

        let logits = match self.head {
            Some((w, b)) => {
                let w = tape.param(&self.params, w);
                let b = tape.param(&self.params, b);
                let logits = tape.matmul(y, w);
                tape.add_row(logits, b)
            }
            None => {
                let emb = tape.param(&self.params, self.tok_emb);
                let emb_t = tape.transpose(emb);
                tape.matmul(y, emb_t)
            }
        };
        let bias = tape.param(&self.params, self.out_bias);
        tape.add_row(logits, bias)
    }

    fn batch_loss(
        &self,
        tape: &mut Tape,
        batch: &[RepairPair],
        dropout: &mut Dropout,
    ) -> Result<(Var, LossStats)> {
        if batch.is_empty() {
            return Err(NnError::EmptyBatch);
        }
        let mut total: Option<Var> = None;
        let mut token_count = 0usize;
        let mut correct = 0usize;
        let mut weighted_loss = 0.0;

        for pair in batch {
            let encoder_out = self.encode_on_tape(tape, &pair.source, dropout);
            let logits = self.decode_on_tape(tape, pair.decoder_input(), encoder_out, dropout);
            let targets: Vec<usize> = pair.decoder_targets().iter().map(|&t| t as usize).collect();
            let ce = tape.cross_entropy_mean(logits, &targets);
            let n = targets.len();
            token_count += n;
            weighted_loss += tape.value(ce)[(0, 0)] * n as f64;
            correct += count_argmax_hits(tape.value(logits), &targets);
            let weighted = tape.scale(ce, n as f64);
            total = Some(match total {
                Some(acc) => tape.add(acc, weighted),
                None => weighted,
            });
        }

        let total = total.expect("batch checked non-empty");
        let mean = tape.scale(total, 1.0 / token_count as f64);
        Ok((
            mean,
            LossStats {
                loss: weighted_loss / token_count as f64,
                token_count,
                correct_tokens: correct,
            },
        ))
    }

}

pub(crate) fn count_argmax_hits(logits: &Array2<f64>, targets: &[usize]) -> usize {
    logits
        .axis_iter(ndarray::Axis(0))
        .zip(targets)
        .filter(|(row, &target)| {
            let mut best = 0;
            let mut best_val = f64::NEG_INFINITY;
            for (idx, &v) in row.iter().enumerate() {
                if v > best_val {
                    best_val = v;
                    best = idx;
                }
            }
            best == target
        })
        .count()
}

/// Deterministic inverted-dropout mask stream. `None` seed or zero rate
/// makes it a no-op, which is the required inference behavior.
pub(crate) struct Dropout {
    rng: Option<ChaCha20Rng>,
    rate: f64,
}

impl Dropout {
    pub(crate) fn new(rate: f64, seed: Option<u64>) -> Dropout {
        Dropout {
            rng: seed.filter(|_| rate > 0.0).map(ChaCha20Rng::seed_from_u64),
            rate,
        }
    }

    pub(crate) fn disabled() -> Dropout {
        Dropout { rng: None, rate: 0.0 }
    }

    pub(crate) fn apply(&mut self, tape: &mut Tape, x: Var) -> Var {
        let Some(rng) = &mut self.rng else {
            return x;
        };
        use rand_chacha::rand_core::RngCore;
        let keep = 1.0 - self.rate;
        let shape = tape.value(x).raw_dim();
        let mask = Array2::from_shape_fn(shape, |_| {
            let draw = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
            if draw < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let mask = tape.input(mask);
        tape.mul(x, mask)
    }
}

impl PatchModel for TransformerModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Transformer
    }

    fn tag(&self) -> &'static str {
        "codebert-style"
    }

    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn specials(&self) -> GeneratorSpecials {
        self.specials
    }

    fn beam_size(&self) -> usize {
        self.config.beam_size
    }

    fn max_source_len(&self) -> usize {
        self.config.max_source_len
    }

    fn max_target_len(&self) -> usize {
        self.config.max_target_len
    }

    fn vocab_hash(&self) -> &str {
        &self.vocab_hash
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn loss(&self, batch: &[RepairPair]) -> Result<LossStats> {
        let mut tape = Tape::new(false);
        let mut dropout = Dropout::disabled();
        let (_, stats) = self.batch_loss(&mut tape, batch, &mut dropout)?;
        Ok(stats)
    }

    fn loss_grads(
        &self,
        batch: &[RepairPair],
        dropout_seed: Option<u64>,
    ) -> Result<(LossStats, Grads)> {
        let mut tape = Tape::new(true);
        let mut dropout = Dropout::new(self.config.dropout, dropout_seed);
        let (loss, stats) = self.batch_loss(&mut tape, batch, &mut dropout)?;
        let grads = tape.backward(loss, &self.params);
        Ok((stats, grads))
    }

    fn encode_source(&self, source: &[u32]) -> SourceCache {
        let mut tape = Tape::new(false);
        let mut dropout = Dropout::disabled();
        let out = self.encode_on_tape(&mut tape, source, &mut dropout);
        SourceCache {
            matrices: vec![tape.value(out).clone()],
        }
    }

    fn next_log_probs(&self, cache: &SourceCache, prefix: &[u32]) -> Vec<f64> {
        let mut tape = Tape::new(false);
        let mut dropout = Dropout::disabled();
        let encoder_out = tape.input(cache.matrices[0].clone());
        // Generation is capped at max_target_len, so the positional table
        // always covers the prefix.
        let prefix: Vec<u32> = prefix
            .iter()
            .copied()
            .take(self.config.max_target_len)
            .collect();
        let logits = self.decode_on_tape(&mut tape, &prefix, encoder_out, &mut dropout);
        let values = tape.value(logits);
        let last = values.row(values.nrows() - 1);
        log_softmax_row(last.as_slice().expect("contiguous row"))
    }

    fn config_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.config).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_model(vocab_size: usize) -> TransformerModel {
        let mut config = ModelConfig::toy(vocab_size);
        config.init_seed = 7;
        TransformerModel::build_raw(
            config,
            GeneratorSpecials { bos: 0, eos: 2 },
            "test-hash".into(),
        )
        .unwrap()
    }

    fn pair(source: Vec<u32>, target: Vec<u32>) -> RepairPair {
        RepairPair {
            id: "t".into(),
            source_len: source.len(),
            target_len: target.len(),
            source_truncated: false,
            target_truncated: false,
            source,
            target,
        }
    }

    #[test]
    fn untrained_loss_is_near_ln_vocab() {
        let vocab_size = 300;
        let model = toy_model(vocab_size);
        let batch = vec![pair(vec![0, 10, 11, 2], vec![0, 12, 13, 14, 2])];
        let stats = model.loss(&batch).unwrap();
        let uniform = (vocab_size as f64).ln();
        assert!(
            (stats.loss - uniform).abs() / uniform < 0.05,
            "loss {} vs ln|V| {}",
            stats.loss,
            uniform
        );
    }

    #[test]
    fn loss_is_deterministic() {
        let model = toy_model(50);
        let batch = vec![pair(vec![0, 10, 2], vec![0, 11, 2])];
        let a = model.loss(&batch).unwrap();
        let b = model.loss(&batch).unwrap();
        assert_eq!(a.loss.to_bits(), b.loss.to_bits());
    }

    #[test]
    fn empty_batch_is_fatal() {
        let model = toy_model(50);
        assert!(matches!(model.loss(&[]), Err(NnError::EmptyBatch)));
    }

    #[test]
    fn toy_parameter_count_matches_formula() {
        let mut config = ModelConfig::toy(300);
        config.hidden_dim = 32;
        config.attention_heads = 4;
        config.encoder_layers = 2;
        config.decoder_layers = 2;
        config.max_source_len = 64;
        config.max_target_len = 64;
        let model =
            TransformerModel::build_raw(config, GeneratorSpecials { bos: 0, eos: 2 }, "h".into())
                .unwrap();

        // Independent count: embeddings + per-layer blocks + output bias.
        let (v, d, f, src, tgt) = (300usize, 32usize, 128usize, 64usize, 64usize);
        let ln = 2 * d;
        let attn = 4 * (d * d + d);
        let ffn = d * f + f + f * d + d;
        let enc_layer = attn + ffn + 2 * ln;
        let dec_layer = 2 * attn + ffn + 3 * ln;
        let expected = v * d          // tok_emb (tied head)
            + src * d + tgt * d       // positional tables
            + 2 * ln                  // embedding layer norms
            + 2 * enc_layer
            + 2 * dec_layer
            + v;                      // output bias
        assert_eq!(model.params().total_scalars(), expected);
        assert!(model.params().total_scalars() < 1_000_000);
    }

    #[test]
    fn shape_safety_logits_are_len_by_vocab() {
        let model = toy_model(40);
        let cache = model.encode_source(&[0, 5, 6, 2]);
        let lp = model.next_log_probs(&cache, &[0, 7, 8]);
        assert_eq!(lp.len(), 40);
        let sum: f64 = lp.iter().map(|v| v.exp()).sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }
}
