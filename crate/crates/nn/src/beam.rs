//! Length-normalized beam search shared by both generators.
//!
//! Semantics are kept simple enough to reason about exactly: every live
//! hypothesis is expanded over the whole vocabulary, the top `beam_size`
//! children survive, and a child that just emitted EOS (or hit the length
//! cap) retires to the completed pool. With `beam_size` at least the number
//! of reachable children per step nothing is ever pruned, so the search
//! provably returns the exhaustive-enumeration optimum — the property the
//! oracle tests pin down. `beam_size = 1` is greedy decoding by
//! construction.

use apr_core::tokenizer::Vocab;

use crate::model::PatchModel;

/// One ranked generation result.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    /// Generated tokens (no BOS; includes the terminating EOS when one was
    /// emitted before the length cap).
    pub ids: Vec<u32>,
    /// Decoded text; empty when no vocabulary was supplied.
    pub text: String,
    /// Total log-probability divided by generated token count.
    pub score: f64,
    /// 1-based; rank 1 is the top-1 candidate.
    pub rank: u32,
}

#[derive(Clone)]
struct Hypothesis {
    tokens: Vec<u32>,
    log_prob: f64,
}

impl Hypothesis {
    fn generated(&self) -> usize {
        self.tokens.len() - 1 // minus BOS
    }

    fn normalized(&self) -> f64 {
        self.log_prob / self.generated().max(1) as f64
    }
}

/// Decode up to `beam_size` candidates for one framed source sequence.
pub fn beam_search<M: PatchModel + ?Sized>(
    model: &M,
    source: &[u32],
    beam_size: usize,
    max_target_len: usize,
    vocab: Option<&Vocab>,
) -> Vec<Candidate> {
    assert!(beam_size >= 1, "beam_size must be >= 1");
    assert!(max_target_len >= 1, "max_target_len must be >= 1");
    let specials = model.specials();
    let cache = model.encode_source(source);

    let mut live = vec![Hypothesis {
        tokens: vec![specials.bos],
        log_prob: 0.0,
    }];
    let mut completed: Vec<Hypothesis> = Vec::new();

    for step in 0..max_target_len {
        if live.is_empty() {
            break;
        }
        let mut children: Vec<Hypothesis> = Vec::new();
        for hypothesis in &live {
            let log_probs = model.next_log_probs(&cache, &hypothesis.tokens);
            for (token, &lp) in log_probs.iter().enumerate() {
                let mut tokens = hypothesis.tokens.clone();
                tokens.push(token as u32);
                children.push(Hypothesis {
                    tokens,
                    log_prob: hypothesis.log_prob + lp,
                });
            }
        }
        // All children at one step have equal length, so ranking by total
        // log-probability equals ranking by the normalized score.
        children.sort_by(|a, b| {
            b.log_prob
                .partial_cmp(&a.log_prob)
                .expect("log probs are finite")
                .then_with(|| a.tokens.cmp(&b.tokens))
        });
        children.truncate(beam_size);

        live = Vec::new();
        let last_step = step + 1 == max_target_len;
        for child in children {
            if *child.tokens.last().expect("non-empty") == specials.eos || last_step {
                completed.push(child);
            } else {
                live.push(child);
            }
        }
    }

    completed.sort_by(|a, b| {
        b.normalized()
            .partial_cmp(&a.normalized())
            .expect("scores are finite")
            .then_with(|| a.tokens.cmp(&b.tokens))
    });
    completed.truncate(beam_size);

    completed
        .into_iter()
        .enumerate()
        .map(|(idx, hypothesis)| {
            let ids: Vec<u32> = hypothesis.tokens[1..].to_vec();
            let text = vocab
                .map(|v| v.decode(&ids).expect("generated ids are in range"))
                .unwrap_or_default();
            Candidate {
                score: hypothesis.normalized(),
                ids,
                text,
                rank: idx as u32 + 1,
            }
        })
        .collect()
}

/// Greedy decoding: beam search with width one.
pub fn greedy_decode<M: PatchModel + ?Sized>(
    model: &M,
    source: &[u32],
    max_target_len: usize,
    vocab: Option<&Vocab>,
) -> Candidate {
    beam_search(model, source, 1, max_target_len, vocab)
        .into_iter()
        .next()
        .expect("beam search always returns at least one candidate")
}

/// Exhaustive enumeration of every reachable generation, returning the
/// best normalized score and its token sequence. Test oracle only — cost
/// is O(|V|^max_len).
pub fn enumerate_optimum<M: PatchModel + ?Sized>(
    model: &M,
    source: &[u32],
    max_target_len: usize,
) -> (Vec<u32>, f64) {
    let specials = model.specials();
    let cache = model.encode_source(source);
    let vocab_size = model.vocab_size() as u32;

    let mut best: Option<(Vec<u32>, f64)> = None;
    // Depth-first over prefixes of non-EOS tokens; at every node consider
    // terminating with EOS (if within cap) and, at the cap, stopping as-is.
    fn recurse<M: PatchModel + ?Sized>(
        model: &M,
        cache: &crate::model::SourceCache,
        prefix: &mut Vec<u32>,
        log_prob: f64,
        generated: usize,
        max_len: usize,
        eos: u32,
        vocab_size: u32,
        best: &mut Option<(Vec<u32>, f64)>,
    ) {
        if generated == max_len {
            let score = log_prob / generated as f64;
            let tokens = prefix[1..].to_vec();
            if best.as_ref().map_or(true, |(bt, bs)| {
                score > *bs || (score == *bs && tokens < *bt)
            }) {
                *best = Some((tokens, score));
            }
            return;
        }
        let log_probs = model.next_log_probs(cache, prefix);
        for token in 0..vocab_size {
            let lp = log_probs[token as usize];
            prefix.push(token);
            if token == eos {
                let score = (log_prob + lp) / (generated + 1) as f64;
                let tokens = prefix[1..].to_vec();
                if best.as_ref().map_or(true, |(bt, bs)| {
                    score > *bs || (score == *bs && tokens < *bt)
                }) {
                    *best = Some((tokens, score));
                }
            } else {
                recurse(
                    model,
                    cache,
                    prefix,
                    log_prob + lp,
                    generated + 1,
                    max_len,
                    eos,
                    vocab_size,
                    best,
                );
            }
            prefix.pop();
        }
    }

    let mut prefix = vec![specials.bos];
    recurse(
        model,
        &cache,
        &mut prefix,
        0.0,
        0,
        max_target_len,
        specials.eos,
        vocab_size,
        &mut best,
    );
    best.expect("at least the all-EOS sequence exists")
}
