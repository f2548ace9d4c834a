//! Byte-level byte-pair encoding primitives.
//!
//! Follows the GPT-2/RoBERTa convention: raw bytes are mapped to printable
//! unicode symbols, text is pre-tokenized into words, and learned merges
//! are applied per word. Because all 256 byte symbols are always in the
//! vocabulary, every input string is encodable and no unknown token is
//! ever produced for raw text.

use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

/// GPT-2 byte <-> unicode symbol table. Printable latin bytes map to
/// themselves; the rest are remapped into a private range starting at
/// U+0100 so every byte has a visible, space-free symbol.
fn byte_to_char_table() -> &'static [char; 256] {
    static TABLE: OnceLock<[char; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = ['\0'; 256];
        let keep = |b: u32| {
            (0x21..=0x7e).contains(&b) || (0xa1..=0xac).contains(&b) || (0xae..=0xff).contains(&b)
        };
        let mut next_private = 0u32;
        for byte in 0u32..256 {
            table[byte as usize] = if keep(byte) {
                char::from_u32(byte).unwrap()
            } else {
                let c = char::from_u32(256 + next_private).unwrap();
                next_private += 1;
                c
            };
        }
        table
    })
}

fn char_to_byte_table() -> &'static HashMap<char, u8> {
    static TABLE: OnceLock<HashMap<char, u8>> = OnceLock::new();
    TABLE.get_or_init(|| {
        byte_to_char_table()
            .iter()
            .enumerate()
            .map(|(byte, &ch)| (ch, byte as u8))
            .collect()
    })
}

/// Map raw text to its byte-symbol string.
pub fn bytes_to_symbols(text: &str) -> String {
    let table = byte_to_char_table();
    text.bytes().map(|b| table[b as usize]).collect()
}

/// Invert [`bytes_to_symbols`]; unknown symbols cannot appear in tokens
/// produced by this module, but are mapped through UTF-8 replacement to
/// stay total.
pub fn symbols_to_bytes(symbols: &str) -> Vec<u8> {
    let table = char_to_byte_table();
    let mut out = Vec::with_capacity(symbols.len());
    for ch in symbols.chars() {
        match table.get(&ch) {
            Some(&b) => out.push(b),
            None => out.extend_from_slice(ch.to_string().as_bytes()),
        }
    }
    out
}

/// The symbol every byte maps to, as a one-char string.
pub fn byte_symbol(byte: u8) -> String {
    byte_to_char_table()[byte as usize].to_string()
}

const CONTRACTIONS: [&str; 7] = ["'s", "'t", "'re", "'ve", "'m", "'ll", "'d"];

/// GPT-2-style pre-tokenization.
///
/// Splits into contractions, optionally space-prefixed letter runs, digit
/// runs, punctuation runs, and whitespace runs (a trailing space glues to
/// the following word). Mirrors the reference regex without lookaround.
pub fn pre_tokenize(text: &str) -> Vec<&str> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let n = chars.len();
    let mut words = Vec::new();
    let mut i = 0;
    while i < n {
        let start = chars[i].1;
        if let Some(len) = match_contraction(text, chars[i].0) {
            let end_byte = chars[i].0 + len;
            words.push(&text[chars[i].0..end_byte]);
            while i < n && chars[i].0 < end_byte {
                i += 1;
            }
            continue;
        }
        if start.is_whitespace() {
            let mut j = i;
            while j < n && chars[j].1.is_whitespace() {
                j += 1;
            }
            // A single trailing space before a word belongs to that word,
            // but only if it is an ASCII space.
            let glue = j < n && chars[j - 1].1 == ' ';
            let end = if glue { j - 1 } else { j };
            if end > i {
                words.push(slice(text, &chars, i, end));
                i = end;
                continue;
            }
            // Lone space directly before a word: handled below as prefix.
        }
        let lead_space = start == ' ';
        let k = if lead_space { i + 1 } else { i };
        if k < n && chars[k].1.is_alphabetic() {
            let mut j = k;
            while j < n && chars[j].1.is_alphabetic() {
                j += 1;
            }
            words.push(slice(text, &chars, i, j));
            i = j;
        } else if k < n && chars[k].1.is_numeric() {
            let mut j = k;
            while j < n && chars[j].1.is_numeric() {
                j += 1;
            }
            words.push(slice(text, &chars, i, j));
            i = j;
        } else if k < n && !chars[k].1.is_whitespace() {
            let mut j = k;
            while j < n
                && !chars[j].1.is_whitespace()
                && !chars[j].1.is_alphabetic()
                && !chars[j].1.is_numeric()
            {
                j += 1;
            }
            words.push(slice(text, &chars, i, j));
            i = j;
        } else {
            // Space at end of text or before another space.
            words.push(slice(text, &chars, i, i + 1));
            i += 1;
        }
    }
    words
}

fn slice<'a>(text: &'a str, chars: &[(usize, char)], from: usize, to: usize) -> &'a str {
    let start = chars[from].0;
    let end = if to < chars.len() {
        chars[to].0
    } else {
        text.len()
    };
    &text[start..end]
}

fn match_contraction(text: &str, at: usize) -> Option<usize> {
    let rest = &text[at..];
    CONTRACTIONS
        .iter()
        .find(|c| rest.starts_with(**c))
        .map(|c| c.len())
}

/// Apply merge rules to one word's symbol string, lowest rank first.
pub fn apply_merges(word: &str, ranks: &HashMap<(String, String), u32>) -> Vec<String> {
    let mut symbols: Vec<String> = word.chars().map(|c| c.to_string()).collect();
    if symbols.len() < 2 {
        return symbols;
    }
    loop {
        let mut best: Option<(u32, (String, String))> = None;
        for window in symbols.windows(2) {
            let pair = (window[0].clone(), window[1].clone());
            if let Some(&rank) = ranks.get(&pair) {
                if best.as_ref().map_or(true, |(r, _)| rank < *r) {
                    best = Some((rank, pair));
                }
            }
        }
        let Some((_, target)) = best else { break };
        // Merge every occurrence of the chosen pair in one left-to-right pass.
        let mut merged = Vec::with_capacity(symbols.len());
        let mut i = 0;
        while i < symbols.len() {
            if i + 1 < symbols.len() && symbols[i] == target.0 && symbols[i + 1] == target.1 {
                merged.push(format!("{}{}", target.0, target.1));
                i += 2;
            } else {
                merged.push(symbols[i].clone());
                i += 1;
            }
        }
        symbols = merged;
        if symbols.len() < 2 {
            break;
        }
    }
    symbols
}

/// Learn `merge_count` byte-pair merges over a corpus of lines.
///
/// Ties on pair frequency break toward the lexicographically smallest pair
/// so training is order-independent and deterministic.
pub fn learn_merges(lines: &[String], merge_count: usize) -> Vec<(String, String)> {
    let mut word_freqs: BTreeMap<Vec<String>, usize> = BTreeMap::new();
    for line in lines {
        for word in pre_tokenize(line) {
            let symbols: Vec<String> = bytes_to_symbols(word)
                .chars()
                .map(|c| c.to_string())
                .collect();
            if !symbols.is_empty() {
                *word_freqs.entry(symbols).or_insert(0) += 1;
            }
        }
    }

    let mut merges = Vec::with_capacity(merge_count);
    for _ in 0..merge_count {
        let mut pair_counts: BTreeMap<(String, String), usize> = BTreeMap::new();
        for (word, freq) in &word_freqs {
            for pair in word.windows(2) {
                *pair_counts
                    .entry((pair[0].clone(), pair[1].clone()))
                    .or_insert(0) += freq;
            }
        }
        let Some((pair, _)) = pair_counts
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
        else {
            break;
        };

        let merged_symbol = format!("{}{}", pair.0, pair.1);
        let mut next: BTreeMap<Vec<String>, usize> = BTreeMap::new();
        for (word, freq) in word_freqs {
            let mut out = Vec::with_capacity(word.len());
            let mut i = 0;
            while i < word.len() {
                if i + 1 < word.len() && word[i] == pair.0 && word[i + 1] == pair.1 {
                    out.push(merged_symbol.clone());
                    i += 2;
                } else {
                    out.push(word[i].clone());
                    i += 1;
                }
            }
            *next.entry(out).or_insert(0) += freq;
        }
        word_freqs = next;
        merges.push(pair);
    }
    merges
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_table_is_a_bijection() {
        let table = byte_to_char_table();
        let mut seen = std::collections::HashSet::new();
        for &c in table.iter() {
            assert!(seen.insert(c));
            assert!(c != ' ');
        }
        for b in 0..=255u8 {
            assert_eq!(symbols_to_bytes(&byte_symbol(b)), vec![b]);
        }
    }

    #[test]
    fn pre_tokenize_splits_like_the_reference() {
        assert_eq!(pre_tokenize("a = b ;"), vec!["a", " =", " b", " ;"]);
        assert_eq!(pre_tokenize("foo(bar,1)"), vec!["foo", "(", "bar", ",", "1", ")"]);
        assert_eq!(pre_tokenize("don't"), vec!["don", "'t"]);
        assert_eq!(pre_tokenize("x  y"), vec!["x", " ", " y"]);
        assert_eq!(pre_tokenize("x "), vec!["x", " "]);
        assert_eq!(pre_tokenize(""), Vec::<&str>::new());
    }

    #[test]
    fn forced_most_frequent_merge() {
        let merges = learn_merges(&["aaaa".to_string()], 1);
        assert_eq!(merges, vec![("a".to_string(), "a".to_string())]);
    }

    #[test]
    fn merges_apply_lowest_rank_first() {
        let mut ranks = HashMap::new();
        ranks.insert(("a".to_string(), "b".to_string()), 0);
        ranks.insert(("ab".to_string(), "c".to_string()), 1);
        assert_eq!(apply_merges("abc", &ranks), vec!["abc".to_string()]);
        assert_eq!(
            apply_merges("acb", &ranks),
            vec!["a".to_string(), "c".to_string(), "b".to_string()]
        );
    }
}
