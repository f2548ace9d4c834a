//! Whitespace canonicalization and checksum helpers.
//!
//! One normalization rule is shared by corpus deduplication, tokenizer
//! round-trips, and exact-match scoring so that "the same statement"
//! means the same thing everywhere in the pipeline.

use sha2::{Digest, Sha256};

/// Collapse every whitespace run to a single ASCII space and trim the ends.
///
/// Case is preserved: Java is case-sensitive and `foo` vs `Foo` is a real
/// difference in a patch.
pub fn normalize_ws(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut in_space = false;
    for ch in text.chars() {
        if ch.is_whitespace() {
            in_space = true;
        } else {
            if in_space && !out.is_empty() {
                out.push(' ');
            }
            in_space = false;
            out.push(ch);
        }
    }
    out
}

/// Hex-encoded SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        use std::fmt::Write;
        let _ = write!(out, "{byte:02x}");
    }
    out
}

/// Hex-encoded SHA-256 of a file's contents.
pub fn sha256_file(path: &std::path::Path) -> std::io::Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(sha256_hex(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collapses_runs_and_trims() {
        assert_eq!(normalize_ws("a  =  b ;"), "a = b ;");
        assert_eq!(normalize_ws("  x\t\n y  "), "x y");
        assert_eq!(normalize_ws(""), "");
        assert_eq!(normalize_ws(" \t\n"), "");
    }

    #[test]
    fn preserves_case_and_interior_tokens() {
        assert_eq!(normalize_ws("Foo.bar( a,b )"), "Foo.bar( a,b )");
    }

    #[test]
    fn idempotent() {
        let s = "if ( x  != null ) {";
        assert_eq!(normalize_ws(&normalize_ws(s)), normalize_ws(s));
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
