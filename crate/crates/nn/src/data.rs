//! Tokenized training examples.

use apr_core::corpus::BugInstance;
use apr_core::tokenizer::{encode_code, Vocab};

/// One (buggy -> fixed) example, framed and encoded.
#[derive(Debug, Clone, PartialEq)]
pub struct RepairPair {
    pub id: String,
    /// `<s> buggy </s>`, truncated to the encoder limit.
    pub source: Vec<u32>,
    /// `<s> fixed </s>`, truncated to the decoder limit.
    pub target: Vec<u32>,
    pub source_len: usize,
    pub target_len: usize,
    pub source_truncated: bool,
    pub target_truncated: bool,
}

impl RepairPair {
    pub fn from_instance(
        instance: &BugInstance,
        vocab: &Vocab,
        max_source_len: usize,
        max_target_len: usize,
    ) -> RepairPair {
        let source = encode_code(&instance.source_before_fix, vocab, max_source_len);
        let target = encode_code(&instance.source_after_fix, vocab, max_target_len);
        RepairPair {
            id: instance.id.clone(),
            source_len: source.len(),
            target_len: target.len(),
            source_truncated: source.truncated,
            target_truncated: target.truncated,
            source: source.ids,
            target: target.ids,
        }
    }

    /// Teacher-forcing view: decoder reads `target[..n-1]`, predicts
    /// `target[1..]`.
    pub fn decoder_input(&self) -> &[u32] {
        &self.target[..self.target.len() - 1]
    }

    pub fn decoder_targets(&self) -> &[u32] {
        &self.target[1..]
    }
}

/// Tokenize a whole split.
pub fn tokenize_split(
    instances: &[BugInstance],
    vocab: &Vocab,
    max_source_len: usize,
    max_target_len: usize,
) -> Vec<RepairPair> {
    instances
        .iter()
        .map(|i| RepairPair::from_instance(i, vocab, max_source_len, max_target_len))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use apr_core::tokenizer::train_toy_vocab;

    #[test]
    fn teacher_forcing_views_shift_by_one() {
        let vocab = train_toy_vocab(&["a = b ;".to_string()], 4).unwrap();
        let instance = BugInstance {
            id: "c:0".into(),
            project_name: "p".into(),
            fix_commit_sha1: "c".repeat(40),
            bug_type: "T".into(),
            source_before_fix: "a = b ;".into(),
            source_after_fix: "a = c ;".into(),
            extra: serde_json::Map::new(),
        };
        let pair = RepairPair::from_instance(&instance, &vocab, 64, 64);
        assert_eq!(pair.decoder_input().len(), pair.decoder_targets().len());
        assert_eq!(pair.decoder_input()[0], vocab.specials().cls);
        assert_eq!(
            *pair.decoder_targets().last().unwrap(),
            vocab.specials().eos
        );
    }
}
