//! Byte-level subword tokenization with the encoder's framing convention.
//!
//! Statements are whitespace-normalized, BPE-encoded at the byte level,
//! and framed as `<s> code </s>` — the two framing tokens the encoder
//! reserves internally, which caps the code payload at 510 tokens of a
//! 512-token sequence. Over-long payloads are tail-truncated and flagged,
//! never dropped.

mod bbpe;
mod vocab;

pub use bbpe::{learn_merges, pre_tokenize};
pub use vocab::{load_vocab, save_vocab, train_toy_vocab, SpecialIds, Vocab, MERGES_FILE, VOCAB_FILE};

use crate::text::normalize_ws;
use crate::Result;

/// Sequence length the encoder was pretrained with.
pub const MAX_SEQ_LEN: usize = 512;
/// Framing tokens added around the code payload.
pub const FRAMING_TOKENS: usize = 2;
/// Longest code payload that fits an unframed slot of [`MAX_SEQ_LEN`].
pub const MAX_CODE_TOKENS: usize = MAX_SEQ_LEN - FRAMING_TOKENS;

/// Positions of the framing markers inside a framed sequence. The NL
/// segment is left empty in this pipeline, so no separator is emitted and
/// `sep` stays `None`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SpecialPositions {
    pub cls: Option<usize>,
    pub sep: Option<usize>,
    pub eos: Option<usize>,
}

/// A framed, encoded statement.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    /// Parallel token strings (byte symbols for content, names for specials).
    pub texts: Vec<String>,
    pub specials: SpecialPositions,
    /// Set when the code payload was cut to fit `max_len`.
    pub truncated: bool,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Content ids without the framing tokens.
    pub fn payload(&self) -> &[u32] {
        let start = self.specials.cls.map_or(0, |p| p + 1);
        let end = self.specials.eos.unwrap_or(self.ids.len());
        &self.ids[start..end]
    }
}

/// Unframed token length of a statement under `vocab` (whitespace
/// normalized first). This is the length the 510-token constraint and the
/// patch-length analyses are measured in.
pub fn code_token_len(vocab: &Vocab, text: &str) -> usize {
    vocab.encode(&normalize_ws(text)).len()
}

/// Encode a statement with code-only framing: `<s> c1..cm </s>`.
///
/// The payload is the BPE encoding of the whitespace-normalized text; if it
/// exceeds `max_len` minus the framing tokens, the tail is dropped and the
/// sequence is flagged truncated.
pub fn encode_code(text: &str, vocab: &Vocab, max_len: usize) -> TokenSequence {
    assert!(
        max_len >= FRAMING_TOKENS + 1,
        "max_len {max_len} leaves no room for code"
    );
    let capacity = max_len - FRAMING_TOKENS;
    let mut payload = vocab.encode(&normalize_ws(text));
    let truncated = payload.len() > capacity;
    payload.truncate(capacity);

    let specials = vocab.specials();
    let mut ids = Vec::with_capacity(payload.len() + FRAMING_TOKENS);
    ids.push(specials.cls);
    ids.extend_from_slice(&payload);
    ids.push(specials.eos);

    let texts = ids
        .iter()
        .map(|&id| vocab.token_text(id).unwrap_or("<unk>").to_string())
        .collect();

    TokenSequence {
        specials: SpecialPositions {
            cls: Some(0),
            sep: None,
            eos: Some(ids.len() - 1),
        },
        texts,
        truncated,
        ids,
    }
}

/// Decode ids back to statement text: specials stripped, byte-level
/// detokenization. For non-truncated sequences this inverts
/// [`encode_code`] up to whitespace normalization.
pub fn decode(ids: &[u32], vocab: &Vocab) -> Result<String> {
    vocab.decode(ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Vocab {
        train_toy_vocab(&["a = b ;".to_string(), "foo(bar)".to_string()], 16).unwrap()
    }

    #[test]
    fn empty_string_is_framing_only() {
        let vocab = toy();
        let seq = encode_code("", &vocab, MAX_SEQ_LEN);
        assert_eq!(seq.ids, vec![vocab.specials().cls, vocab.specials().eos]);
        assert!(!seq.truncated);
        assert_eq!(decode(&seq.ids, &vocab).unwrap(), "");
    }

    #[test]
    fn exactly_510_code_tokens_fit_unframed() {
        let vocab = train_toy_vocab(&[], 0).unwrap(); // pure byte vocab: 1 token per byte
        let code: String = "x".repeat(510);
        let seq = encode_code(&code, &vocab, MAX_SEQ_LEN);
        assert!(!seq.truncated);
        assert_eq!(seq.len(), 512);
    }

    #[test]
    fn over_length_code_is_tail_truncated_to_512() {
        let vocab = train_toy_vocab(&[], 0).unwrap();
        let code: String = "y".repeat(600);
        let seq = encode_code(&code, &vocab, MAX_SEQ_LEN);
        assert!(seq.truncated);
        assert_eq!(seq.len(), 512);
        // Head is kept, tail dropped.
        assert_eq!(decode(&seq.ids, &vocab).unwrap(), "y".repeat(510));
    }

    #[test]
    fn round_trip_equals_normalized_input() {
        let vocab = toy();
        for text in ["a = b ;", "a  =  b ;", "if (foo != null) { bar(); }"] {
            let seq = encode_code(text, &vocab, MAX_SEQ_LEN);
            assert_eq!(
                decode(&seq.ids, &vocab).unwrap(),
                crate::text::normalize_ws(text)
            );
        }
    }

    #[test]
    fn framed_sequence_has_cls_and_eos_once() {
        let vocab = toy();
        let seq = encode_code("a = b ;", &vocab, MAX_SEQ_LEN);
        let specials = vocab.specials();
        let cls_count = seq.ids.iter().filter(|&&id| id == specials.cls).count();
        let eos_count = seq.ids.iter().filter(|&&id| id == specials.eos).count();
        assert_eq!((cls_count, eos_count), (1, 1));
        assert_eq!(seq.specials.cls, Some(0));
        assert_eq!(seq.specials.eos, Some(seq.len() - 1));
        assert_eq!(seq.specials.sep, None);
    }

    #[test]
    fn payload_excludes_framing() {
        let vocab = toy();
        let seq = encode_code("ab", &vocab, MAX_SEQ_LEN);
        assert_eq!(seq.payload().len(), seq.len() - 2);
    }
}
