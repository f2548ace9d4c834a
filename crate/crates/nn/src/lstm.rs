//! Recurrent baseline: bidirectional LSTM encoder, LSTM decoder with
//! global dot-product attention over projected encoder states. No copy
//! mechanism and no abstraction phase — the comparison point is pure
//! sequence generation over the shared subword vocabulary.

use ndarray::Array2;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use apr_core::tokenizer::Vocab;

use crate::data::RepairPair;
use crate::model::{
    BaselineConfig, GeneratorSpecials, LossStats, ModelKind, PatchModel, SourceCache,
};
use crate::params::{uniform_init, Grads, ParamId, ParamSet};
use crate::tape::{log_softmax_row, Tape, Var};
use crate::transformer::{count_argmax_hits, Dropout};
use crate::{NnError, Result};

struct LstmCell {
    wx: ParamId,
    wh: ParamId,
    bias: ParamId,
}

/// The simple seq2seq baseline.
pub struct BaselineModel {
    config: BaselineConfig,
    specials: GeneratorSpecials,
    vocab_hash: String,
    params: ParamSet,
    emb: ParamId,
    enc_fwd: LstmCell,
    enc_bwd: LstmCell,
    dec: LstmCell,
    /// Projects (2H) encoder states to (H) so attention is a plain dot
    /// product with the decoder state.
    attn_proj: ParamId,
    init_h: (ParamId, ParamId),
    init_c: (ParamId, ParamId),
    combine_w: ParamId,
    combine_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

fn add_cell(
    params: &mut ParamSet,
    rng: &mut ChaCha20Rng,
    prefix: &str,
    input_dim: usize,
    hidden: usize,
) -> LstmCell {
    let bound = 1.0 / (hidden as f64).sqrt();
    let wx = params.add(
        format!("{prefix}.wx"),
        uniform_init(rng, input_dim, 4 * hidden, bound),
    );
    let wh = params.add(
        format!("{prefix}.wh"),
        uniform_init(rng, hidden, 4 * hidden, bound),
    );
    // Forget-gate slice starts at one so early training keeps state.
    let mut bias = Array2::zeros((1, 4 * hidden));
    bias.slice_mut(ndarray::s![.., hidden..2 * hidden]).fill(1.0);
    let bias = params.add(format!("{prefix}.bias"), bias);
    LstmCell { wx, wh, bias }
}

impl BaselineModel {
    pub fn build(config: &BaselineConfig, vocab: &Vocab) -> Result<BaselineModel> {
        if vocab.len() != config.vocab_size {
            return Err(NnError::Config(format!(
                "config.vocab_size {} != vocabulary size {}",
                config.vocab_size,
                vocab.len()
            )));
        }
        Self::build_raw(
            config.clone(),
            GeneratorSpecials::from_vocab(vocab),
            vocab.hash().to_string(),
        )
    }

    pub fn build_raw(
        config: BaselineConfig,
        specials: GeneratorSpecials,
        vocab_hash: String,
    ) -> Result<BaselineModel> {
        config.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(config.init_seed);
        let mut params = ParamSet::new();
        let (v, e, h) = (config.vocab_size, config.embedding_dim, config.hidden_dim);
        let bound = 1.0 / (h as f64).sqrt();

        let emb = params.add("emb", uniform_init(&mut rng, v, e, 0.1));
        let enc_fwd = add_cell(&mut params, &mut rng, "encoder.fwd", e, h);
        let enc_bwd = add_cell(&mut params, &mut rng, "encoder.bwd", e, h);
        let dec = add_cell(&mut params, &mut rng, "decoder", e, h);
        let attn_proj = params.add("attn.proj", uniform_init(&mut rng, 2 * h, h, bound));
        let init_h = (
            params.add("init.h.w", uniform_init(&mut rng, 2 * h, h, bound)),
            params.add("init.h.b", Array2::zeros((1, h))),
        );
        let init_c = (
            params.add("init.c.w", uniform_init(&mut rng, 2 * h, h, bound)),
            params.add("init.c.b", Array2::zeros((1, h))),
        );
        let combine_w = params.add("combine.w", uniform_init(&mut rng, 3 * h, h, bound));
        let combine_b = params.add("combine.b", Array2::zeros((1, h)));
        let out_w = params.add("out.w", uniform_init(&mut rng, h, v, bound));
        let out_b = params.add("out.b", Array2::zeros((1, v)));

        Ok(BaselineModel {
            config,
            specials,
            vocab_hash,
            params,
            emb,
            enc_fwd,
            enc_bwd,
            dec,
            attn_proj,
            init_h,
            init_c,
            combine_w,
            combine_b,
            out_w,
            out_b,
        })
    }

    pub fn config(&self) -> &BaselineConfig {
        &self.config
    }

    pub fn parameter_report(&self) -> String {
        format!(
            "simple-seq2seq: {} tensors, {} parameters (embedding {}, hidden {})",
            self.params.len(),
            self.params.total_scalars(),
            self.config.embedding_dim,
            self.config.hidden_dim,
        )
    }

    fn cell_step(
        &self,
        tape: &mut Tape,
        cell_params: (Var, Var, Var),
        x: Var,
        h: Var,
        c: Var,
    ) -> (Var, Var) {
        let hidden = self.config.hidden_dim;
        let (wx, wh, bias) = cell_params;
        let zx = tape.matmul(x, wx);
        let zh = tape.matmul(h, wh);
        let z = tape.add(zx, zh);
        let z = tape.add_row(z, bias);
        let i_gate = tape.slice_cols(z, 0, hidden);
        let i_gate = tape.sigmoid(i_gate);
        let f_gate = tape.slice_cols(z, hidden, 2 * hidden);
        let f_gate = tape.sigmoid(f_gate);
        let g_gate = tape.slice_cols(z, 2 * hidden, 3 * hidden);
        let g_gate = tape.tanh(g_gate);
        let o_gate = tape.slice_cols(z, 3 * hidden, 4 * hidden);
        let o_gate = tape.sigmoid(o_gate);
        let keep = tape.mul(f_gate, c);
        let write = tape.mul(i_gate, g_gate);
        let c_next = tape.add(keep, write);
        let c_act = tape.tanh(c_next);
        let h_next = tape.mul(o_gate, c_act);
        (h_next, c_next)
    }

    fn cell_vars(&self, tape: &mut Tape, cell: &LstmCell) -> (Var, Var, Var) {
        (
            tape.param(&self.params, cell.wx),
            tape.param(&self.params, cell.wh),
            tape.param(&self.params, cell.bias),
        )
    }

    /// Run both encoder directions. Returns (encoder states (S, 2H),
    /// projected states (S, H), initial decoder h, initial decoder c).
    fn encode_on_tape(&self, tape: &mut Tape, source: &[u32]) -> (Var, Var, Var, Var) {
        let hidden = self.config.hidden_dim;
        let emb_table = tape.param(&self.params, self.emb);
        let ids: Vec<usize> = source.iter().map(|&t| t as usize).collect();
        let x = tape.embed(emb_table, &ids);
        let len = ids.len();

        let fwd = self.cell_vars(tape, &self.enc_fwd);
        let mut h = tape.input(Array2::zeros((1, hidden)));
        let mut c = tape.input(Array2::zeros((1, hidden)));
        let mut fwd_states = Vec::with_capacity(len);
        for t in 0..len {
            let x_t = tape.slice_rows(x, t, t + 1);
            let (h_next, c_next) = self.cell_step(tape, fwd, x_t, h, c);
            h = h_next;
            c = c_next;
            fwd_states.push(h);
        }
        let fwd_last = h;

        let bwd = self.cell_vars(tape, &self.enc_bwd);
        let mut h = tape.input(Array2::zeros((1, hidden)));
        let mut c = tape.input(Array2::zeros((1, hidden)));
        let mut bwd_states = vec![fwd_last; len];
        for t in (0..len).rev() {
            let x_t = tape.slice_rows(x, t, t + 1);
            let (h_next, c_next) = self.cell_step(tape, bwd, x_t, h, c);
            h = h_next;
            c = c_next;
            bwd_states[t] = h;
        }
        let bwd_last = h;

        let rows: Vec<Var> = fwd_states
            .iter()
            .zip(&bwd_states)
            .map(|(&f, &b)| tape.concat_cols(f, b))
            .collect();
        let enc_states = tape.concat_rows(&rows);

        let attn_proj = tape.param(&self.params, self.attn_proj);
        let enc_proj = tape.matmul(enc_states, attn_proj);

        let summary = tape.concat_cols(fwd_last, bwd_last);
        let (ih_w, ih_b) = (
            tape.param(&self.params, self.init_h.0),
            tape.param(&self.params, self.init_h.1),
        );
        let h0 = tape.matmul(summary, ih_w);
        let h0 = tape.add_row(h0, ih_b);
        let h0 = tape.tanh(h0);
        let (ic_w, ic_b) = (
            tape.param(&self.params, self.init_c.0),
            tape.param(&self.params, self.init_c.1),
        );
        let c0 = tape.matmul(summary, ic_w);
        let c0 = tape.add_row(c0, ic_b);
        let c0 = tape.tanh(c0);

        (enc_states, enc_proj, h0, c0)
    }

    /// One decoder step with attention. Returns (logits (1, V), next h,
    /// next c, attention weights (1, S)).
    #[allow(clippy::too_many_arguments)]
    fn decode_step(
        &self,
        tape: &mut Tape,
        dec_cell: (Var, Var, Var),
        shared: &DecodeShared,
        token: u32,
        h: Var,
        c: Var,
        dropout: &mut Dropout,
    ) -> (Var, Var, Var, Var) {
        let x = tape.embed(shared.emb_table, &[token as usize]);
        let (h_next, c_next) = self.cell_step(tape, dec_cell, x, h, c);

        let scores = tape.matmul(h_next, shared.enc_proj_t);
        let weights = tape.softmax_rows(scores);
        let context = tape.matmul(weights, shared.enc_states);

        let cat = tape.concat_cols(h_next, context);
        let combined = tape.matmul(cat, shared.combine_w);
        let combined = tape.add_row(combined, shared.combine_b);
        let combined = tape.tanh(combined);
        let combined = dropout.apply(tape, combined);

        let logits = tape.matmul(combined, shared.out_w);
        let logits = tape.add_row(logits, shared.out_b);
        (logits, h_next, c_next, weights)
    }

    fn decode_shared(&self, tape: &mut Tape, enc_states: Var, enc_proj: Var) -> DecodeShared {
        DecodeShared {
            emb_table: tape.param(&self.params, self.emb),
            enc_states,
            enc_proj_t: tape.transpose(enc_proj),
            combine_w: tape.param(&self.params, self.combine_w),
            combine_b: tape.param(&self.params, self.combine_b),
            out_w: tape.param(&self.params, self.out_w),
            out_b: tape.param(&self.params, self.out_b),
        }
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
            let (enc_states, enc_proj, mut h, mut c) = self.encode_on_tape(tape, &pair.source);
            let shared = self.decode_shared(tape, enc_states, enc_proj);
            let dec_cell = self.cell_vars(tape, &self.dec);

            let mut step_logits = Vec::with_capacity(pair.decoder_input().len());
            for &token in pair.decoder_input() {
                let (logits, h_next, c_next, _) =
                    self.decode_step(tape, dec_cell, &shared, token, h, c, dropout);
                h = h_next;
                c = c_next;
                step_logits.push(logits);
            }
            let logits = tape.concat_rows(&step_logits);
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

    /// Attention weights per decoder step for a teacher-forced prefix;
    /// row t is the distribution over source positions at step t.
    pub fn attention_probe(&self, source: &[u32], decoder_prefix: &[u32]) -> Array2<f64> {
        let mut tape = Tape::new(false);
        let mut dropout = Dropout::disabled();
        let (enc_states, enc_proj, mut h, mut c) = self.encode_on_tape(&mut tape, source);
        let shared = self.decode_shared(&mut tape, enc_states, enc_proj);
        let dec_cell = self.cell_vars(&mut tape, &self.dec);
        let mut rows = Vec::with_capacity(decoder_prefix.len());
        for &token in decoder_prefix {
            let (_, h_next, c_next, weights) =
                self.decode_step(&mut tape, dec_cell, &shared, token, h, c, &mut dropout);
            h = h_next;
            c = c_next;
            rows.push(weights);
        }
        let stacked = tape.concat_rows(&rows);
        tape.value(stacked).clone()
    }
}

struct DecodeShared {
    emb_table: Var,
    enc_states: Var,
    /// Transposed once per sequence; every step's scores reuse it.
    enc_proj_t: Var,
    combine_w: Var,
    combine_b: Var,
    out_w: Var,
    out_b: Var,
}

impl PatchModel for BaselineModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Baseline
    }

    fn tag(&self) -> &'static str {
        "simple-seq2seq"
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
        let (enc_states, enc_proj, h0, c0) = self.encode_on_tape(&mut tape, source);
        SourceCache {
            matrices: vec![
                tape.value(enc_states).clone(),
                tape.value(enc_proj).clone(),
                tape.value(h0).clone(),
                tape.value(c0).clone(),
            ],
        }
    }

    fn next_log_probs(&self, cache: &SourceCache, prefix: &[u32]) -> Vec<f64> {
        let mut tape = Tape::new(false);
        let mut dropout = Dropout::disabled();
        let enc_states = tape.input(cache.matrices[0].clone());
        let enc_proj = tape.input(cache.matrices[1].clone());
        let mut h = tape.input(cache.matrices[2].clone());
        let mut c = tape.input(cache.matrices[3].clone());
        let shared = self.decode_shared(&mut tape, enc_states, enc_proj);
        let dec_cell = self.cell_vars(&mut tape, &self.dec);
        let mut logits = None;
        for &token in prefix {
            let (step_logits, h_next, c_next, _) =
                self.decode_step(&mut tape, dec_cell, &shared, token, h, c, &mut dropout);
            h = h_next;
            c = c_next;
            logits = Some(step_logits);
        }
        let logits = logits.expect("prefix starts with BOS");
        let values = tape.value(logits);
        log_softmax_row(values.row(0).as_slice().expect("contiguous row"))
    }

    fn config_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.config).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_model(vocab_size: usize) -> BaselineModel {
        let mut config = BaselineConfig::toy(vocab_size);
        config.init_seed = 11;
        BaselineModel::build_raw(
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
        let batch = vec![pair(vec![0, 10, 11, 2], vec![0, 12, 13, 2])];
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
    fn attention_rows_are_distributions() {
        let model = toy_model(60);
        let weights = model.attention_probe(&[0, 9, 8, 7, 2], &[0, 5, 6]);
        assert_eq!(weights.dim(), (3, 5));
        for row in weights.axis_iter(ndarray::Axis(0)) {
            let sum: f64 = row.sum();
            assert!((sum - 1.0).abs() < 1e-6, "row sums to {sum}");
            assert!(row.iter().all(|&w| w >= 0.0));
        }
    }

    #[test]
    fn empty_batch_is_fatal() {
        let model = toy_model(50);
        assert!(matches!(model.loss(&[]), Err(NnError::EmptyBatch)));
    }
}
