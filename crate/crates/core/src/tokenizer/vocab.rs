//! Vocabulary loading, saving, and the byte-fallback guarantee.

use std::collections::HashMap;
use std::path::Path;

use serde_json::Value;

use super::bbpe::{apply_merges, byte_symbol, bytes_to_symbols, learn_merges, pre_tokenize};
use crate::text::sha256_hex;
use crate::{CoreError, Result};

pub const VOCAB_FILE: &str = "vocab.json";
pub const MERGES_FILE: &str = "merges.txt";

/// Special-token ids in the encoder's convention: `<s>` opens a sequence
/// (CLS), `</s>` separates segments and ends generation (SEP/EOS share it).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialIds {
    pub cls: u32,
    pub sep: u32,
    pub eos: u32,
    pub pad: u32,
    pub unk: u32,
    pub mask: Option<u32>,
}

/// An immutable byte-level BPE vocabulary.
#[derive(Debug, Clone)]
pub struct Vocab {
    token_to_id: HashMap<String, u32>,
    id_to_token: HashMap<u32, String>,
    merge_ranks: HashMap<(String, String), u32>,
    merges: Vec<(String, String)>,
    specials: SpecialIds,
    hash: String,
}

impl Vocab {
    /// Number of distinct token ids.
    pub fn len(&self) -> usize {
        self.token_to_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_to_id.is_empty()
    }

    pub fn specials(&self) -> SpecialIds {
        self.specials
    }

    /// True for ids that frame or pad sequences rather than carry text.
    pub fn is_special(&self, id: u32) -> bool {
        let s = &self.specials;
        id == s.cls || id == s.sep || id == s.eos || id == s.pad || id == s.unk
            || s.mask == Some(id)
    }

    pub fn token_text(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(&id).map(|s| s.as_str())
    }

    /// Content hash binding checkpoints and predictions to one vocabulary.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    /// BPE-encode raw text (no framing, no normalization).
    ///
    /// Total on any byte string: every byte symbol is in the vocabulary, so
    /// no unknown id is ever emitted.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut ids = Vec::new();
        for word in pre_tokenize(text) {
            let symbols = bytes_to_symbols(word);
            for token in apply_merges(&symbols, &self.merge_ranks) {
                match self.token_to_id.get(&token) {
                    Some(&id) => ids.push(id),
                    // Unreachable for consistent vocabularies; split to the
                    // guaranteed byte symbols instead of emitting <unk>.
                    None => ids.extend(token.chars().map(|c| {
                        self.token_to_id[&c.to_string()]
                    })),
                }
            }
        }
        ids
    }

    /// Inverse of [`Vocab::encode`]: byte-level detokenization, specials
    /// skipped.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut symbols = String::new();
        for &id in ids {
            if self.is_special(id) {
                continue;
            }
            let token = self
                .id_to_token
                .get(&id)
                .ok_or(CoreError::TokenIdOutOfRange {
                    id,
                    vocab_size: self.len(),
                })?;
            symbols.push_str(token);
        }
        let bytes = super::bbpe::symbols_to_bytes(&symbols);
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    /// Assemble a vocabulary from explicit parts, validating the byte
    /// fallback and merge consistency.
    fn assemble(
        token_to_id: HashMap<String, u32>,
        merges: Vec<(String, String)>,
        specials: SpecialIds,
    ) -> Result<Vocab> {
        let mut id_to_token = HashMap::with_capacity(token_to_id.len());
        for (token, &id) in &token_to_id {
            if id_to_token.insert(id, token.clone()).is_some() {
                return Err(CoreError::Invalid(format!(
                    "vocabulary maps two tokens to id {id}"
                )));
            }
        }
        for byte in 0..=255u8 {
            if !token_to_id.contains_key(&byte_symbol(byte)) {
                return Err(CoreError::Invalid(format!(
                    "vocabulary is missing byte symbol for 0x{byte:02x}; byte fallback impossible"
                )));
            }
        }
        for (left, right) in &merges {
            let merged = format!("{left}{right}");
            if !token_to_id.contains_key(&merged) {
                return Err(CoreError::Invalid(format!(
                    "merge ({left}, {right}) produces token {merged:?} absent from the vocabulary"
                )));
            }
        }
        let merge_ranks = merges
            .iter()
            .enumerate()
            .map(|(rank, pair)| (pair.clone(), rank as u32))
            .collect();

        let hash = {
            let mut entries: Vec<(&String, &u32)> = token_to_id.iter().collect();
            entries.sort();
            let mut canon = String::new();
            for (token, id) in entries {
                canon.push_str(&format!("{token}\u{0}{id}\n"));
            }
            canon.push_str("--merges--\n");
            for (l, r) in &merges {
                canon.push_str(&format!("{l} {r}\n"));
            }
            sha256_hex(canon.as_bytes())
        };

        Ok(Vocab {
            token_to_id,
            id_to_token,
            merge_ranks,
            merges,
            specials,
            hash,
        })
    }
}

fn find_special(map: &HashMap<String, u32>, name: &str) -> Option<u32> {
    map.get(name).copied()
}

/// Load a vocabulary from a directory holding `vocab.json` and `merges.txt`
/// in the pretrained encoder's published format. Toy vocabularies saved by
/// [`save_vocab`] use the same layout.
pub fn load_vocab(dir: &Path) -> Result<Vocab> {
    let vocab_path = dir.join(VOCAB_FILE);
    let bytes = std::fs::read(&vocab_path).map_err(|e| CoreError::io(&vocab_path, e))?;
    let value: Value = serde_json::from_slice(&bytes).map_err(|e| CoreError::MalformedVocab {
        path: vocab_path.clone(),
        message: e.to_string(),
    })?;
    let Value::Object(map) = value else {
        return Err(CoreError::MalformedVocab {
            path: vocab_path.clone(),
            message: "vocab.json is not an object".into(),
        });
    };
    let mut token_to_id = HashMap::with_capacity(map.len());
    for (token, id) in map {
        let id = id.as_u64().ok_or_else(|| CoreError::MalformedVocab {
            path: vocab_path.clone(),
            message: format!("id for token {token:?} is not an unsigned integer"),
        })?;
        token_to_id.insert(token, id as u32);
    }

    let merges_path = dir.join(MERGES_FILE);
    let merges_text =
        std::fs::read_to_string(&merges_path).map_err(|e| CoreError::io(&merges_path, e))?;
    let mut merges = Vec::new();
    for (idx, line) in merges_text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let Some((left, right)) = line.split_once(' ') else {
            return Err(CoreError::MalformedVocab {
                path: merges_path.clone(),
                message: format!("merges.txt line {} is not 'A B'", idx + 1),
            });
        };
        merges.push((left.to_string(), right.to_string()));
    }

    let specials = SpecialIds {
        cls: find_special(&token_to_id, "<s>").ok_or_else(|| CoreError::MalformedVocab {
            path: vocab_path.clone(),
            message: "missing <s> token".into(),
        })?,
        sep: find_special(&token_to_id, "</s>").ok_or_else(|| CoreError::MalformedVocab {
            path: vocab_path.clone(),
            message: "missing </s> token".into(),
        })?,
        eos: find_special(&token_to_id, "</s>").expect("checked above"),
        pad: find_special(&token_to_id, "<pad>").ok_or_else(|| CoreError::MalformedVocab {
            path: vocab_path.clone(),
            message: "missing <pad> token".into(),
        })?,
        unk: find_special(&token_to_id, "<unk>").ok_or_else(|| CoreError::MalformedVocab {
            path: vocab_path,
            message: "missing <unk> token".into(),
        })?,
        mask: find_special(&token_to_id, "<mask>"),
    };

    Vocab::assemble(token_to_id, merges, specials)
}

/// Persist a vocabulary in the pretrained encoder's file format.
pub fn save_vocab(vocab: &Vocab, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;

    let mut entries: Vec<(&u32, &String)> =
        vocab.id_to_token.iter().map(|(id, t)| (id, t)).collect();
    entries.sort();
    let mut map = serde_json::Map::new();
    for (&id, token) in entries {
        map.insert(token.clone(), Value::from(id));
    }
    let vocab_path = dir.join(VOCAB_FILE);
    let rendered = serde_json::to_string(&Value::Object(map)).expect("vocab serializes");
    std::fs::write(&vocab_path, rendered).map_err(|e| CoreError::io(&vocab_path, e))?;

    let mut merges_text = String::from("#version: 0.2\n");
    for (left, right) in &vocab.merges {
        merges_text.push_str(&format!("{left} {right}\n"));
    }
    let merges_path = dir.join(MERGES_FILE);
    std::fs::write(&merges_path, merges_text).map_err(|e| CoreError::io(&merges_path, e))
}

/// Train a toy vocabulary: the 256 byte symbols, the standard specials, and
/// `merges` learned byte-pair rules. A desk-scale substitute for the
/// pretrained vocabulary so tests never need a download.
pub fn train_toy_vocab(corpus: &[String], merges: usize) -> Result<Vocab> {
    if corpus.is_empty() && merges > 0 {
        return Err(CoreError::Invalid(
            "cannot learn merges from an empty corpus".into(),
        ));
    }

    let learned = learn_merges(corpus, merges);

    let mut token_to_id = HashMap::new();
    for (id, name) in ["<s>", "<pad>", "</s>", "<unk>"].iter().enumerate() {
        token_to_id.insert(name.to_string(), id as u32);
    }
    let mut next_id = 4u32;
    for byte in 0..=255u8 {
        token_to_id.insert(byte_symbol(byte), next_id);
        next_id += 1;
    }
    for (left, right) in &learned {
        let merged = format!("{left}{right}");
        token_to_id.entry(merged).or_insert_with(|| {
            let id = next_id;
            next_id += 1;
            id
        });
    }
    token_to_id.insert("<mask>".to_string(), next_id);

    let specials = SpecialIds {
        cls: 0,
        sep: 2,
        eos: 2,
        pad: 1,
        unk: 3,
        mask: Some(next_id),
    };
    Vocab::assemble(token_to_id, learned, specials)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_vocab_without_merges_is_bytes_plus_specials() {
        let vocab = train_toy_vocab(&[], 0).unwrap();
        assert_eq!(vocab.len(), 256 + 5);
    }

    #[test]
    fn empty_corpus_with_merges_is_fatal() {
        assert!(train_toy_vocab(&[], 1).is_err());
    }

    #[test]
    fn any_unicode_string_encodes_without_unknowns() {
        let vocab = train_toy_vocab(&["int x = 0;".to_string()], 8).unwrap();
        for text in ["mReadOwners!=null", "λ → μ", "日本語テスト", "\u{1F980} crab"] {
            let ids = vocab.encode(text);
            assert!(ids.iter().all(|&id| id != vocab.specials().unk));
            assert_eq!(vocab.decode(&ids).unwrap(), text);
        }
    }

    #[test]
    fn save_load_round_trip_preserves_encoding_and_hash() {
        let corpus: Vec<String> = (0..50).map(|i| format!("return value{i} + {i};")).collect();
        let vocab = train_toy_vocab(&corpus, 100).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_vocab(&vocab, dir.path()).unwrap();
        let reloaded = load_vocab(dir.path()).unwrap();
        assert_eq!(reloaded.hash(), vocab.hash());
        let sample = "return value7 + 7;";
        assert_eq!(reloaded.encode(sample), vocab.encode(sample));
    }

    #[test]
    fn malformed_vocab_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(VOCAB_FILE), b"not json").unwrap();
        std::fs::write(dir.path().join(MERGES_FILE), b"#version: 0.2\n").unwrap();
        assert!(load_vocab(dir.path()).is_err());
    }

    #[test]
    fn out_of_range_id_fails_decode() {
        let vocab = train_toy_vocab(&[], 0).unwrap();
        let err = vocab.decode(&[9_999]);
        assert!(matches!(err, Err(CoreError::TokenIdOutOfRange { .. })));
    }
}
