//! ManySStuBs4J corpus curation.
//!
//! The raw releases are turned into the four dataset variants used by the
//! experiments ({Duplicate, Unique} x {Large, Small}) through a fixed
//! pipeline: load -> type/emptiness filter -> (dedup for Unique) ->
//! seeded 80/10/10 split -> stats -> export. Every stage is pure and
//! deterministic so a (raw file, seed) pair always reproduces the same
//! bundle byte for byte.

mod dedup;
mod export;
mod filter;
mod raw;
mod split;
mod stats;

pub use dedup::deduplicate;
pub use export::{export_bundle, load_bundle, BundleManifest};
pub use filter::{filter_usable, FilterDelta, DEFAULT_EXCLUDED_TYPES};
pub use raw::{load_raw, write_rejects, LoadOutcome, RejectedRecord};
pub use split::{split, Splits};
pub use stats::{compute_stats, OverLengthCount};

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

use crate::text::normalize_ws;
use crate::tokenizer::Vocab;
use crate::Result;

/// One ManySStuBs4J record after ingestion.
///
/// `extra` carries every raw field we do not interpret, verbatim, so an
/// exported bundle loses nothing relative to the release file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BugInstance {
    /// Stable identifier: first 12 chars of the fix commit plus the record's
    /// ordinal in the release file (commits with several bugs stay distinct).
    pub id: String,
    pub project_name: String,
    pub fix_commit_sha1: String,
    /// SStuB category label, e.g. `SWAP_BOOLEAN_LITERAL`.
    pub bug_type: String,
    /// Buggy statement text.
    pub source_before_fix: String,
    /// Fixed statement text.
    pub source_after_fix: String,
    /// All remaining raw fields, preserved uninterpreted.
    #[serde(default, flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl BugInstance {
    /// Normalized (buggy, fixed) pair used for dedup and novelty checks.
    pub fn normalized_pair(&self) -> (String, String) {
        (
            normalize_ws(&self.source_before_fix),
            normalize_ws(&self.source_after_fix),
        )
    }

    /// First 12 characters of the fix commit, as printed in reports.
    pub fn commit_prefix(&self) -> &str {
        let end = self
            .fix_commit_sha1
            .char_indices()
            .nth(12)
            .map_or(self.fix_commit_sha1.len(), |(i, _)| i);
        &self.fix_commit_sha1[..end]
    }
}

/// Whether a variant keeps repeated (buggy, fixed) pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VariantKind {
    Duplicate,
    Unique,
}

/// Which release the variant was derived from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VariantSize {
    Large,
    Small,
}

/// Dataset variant name, e.g. `Unique-Large`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleName {
    pub kind: VariantKind,
    pub size: VariantSize,
}

impl fmt::Display for BundleName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            VariantKind::Duplicate => "Duplicate",
            VariantKind::Unique => "Unique",
        };
        let size = match self.size {
            VariantSize::Large => "Large",
            VariantSize::Small => "Small",
        };
        write!(f, "{kind}-{size}")
    }
}

impl BundleName {
    pub fn parse(s: &str) -> Option<Self> {
        let (kind, size) = s.split_once('-')?;
        let kind = match kind.to_ascii_lowercase().as_str() {
            "duplicate" => VariantKind::Duplicate,
            "unique" => VariantKind::Unique,
            _ => return None,
        };
        let size = match size.to_ascii_lowercase().as_str() {
            "large" => VariantSize::Large,
            "small" => VariantSize::Small,
            _ => return None,
        };
        Some(BundleName { kind, size })
    }
}

/// Per-stage counts and histograms for one dataset variant.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    /// Records in the release file (accepted + rejected).
    pub raw: usize,
    /// Records rejected at load time (missing required fields).
    pub load_rejects: usize,
    /// Instances surviving the type/emptiness filter.
    pub after_type_filter: usize,
    /// Instances surviving dedup; `None` for Duplicate variants.
    pub after_dedup: Option<usize>,
    /// Dropped instances tallied by cause.
    pub drop_reasons: BTreeMap<String, usize>,
    /// Instances whose buggy or fixed side exceeds 510 unframed tokens;
    /// `None` when no tokenizer was available for length stats.
    pub over_length_510: Option<OverLengthCount>,
    pub per_bug_type: BTreeMap<String, usize>,
    pub per_project: BTreeMap<String, usize>,
}

impl CorpusStats {
    /// Number of instances in the final variant (post-filter, post-dedup).
    pub fn final_count(&self) -> usize {
        self.after_dedup.unwrap_or(self.after_type_filter)
    }
}

/// A named dataset variant with its splits and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetBundle {
    pub name: BundleName,
    pub train: Vec<BugInstance>,
    pub valid: Vec<BugInstance>,
    pub test: Vec<BugInstance>,
    pub stats: CorpusStats,
    pub split_seed: u64,
    /// Identity of the raw release file (name + sha256).
    pub source_release: String,
}

impl DatasetBundle {
    pub fn total_len(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }

    pub fn splits(&self) -> [(&'static str, &[BugInstance]); 3] {
        [
            ("train", self.train.as_slice()),
            ("valid", self.valid.as_slice()),
            ("test", self.test.as_slice()),
        ]
    }
}

/// Run the full preparation pipeline on already-loaded raw instances.
///
/// `load.instances` is filtered, deduplicated when `kind` is `Unique`,
/// split under `seed`, and measured. The tokenizer is optional; without it
/// the over-length stats stay empty.
pub fn prepare_bundle(
    load: &LoadOutcome,
    kind: VariantKind,
    seed: u64,
    vocab: Option<&Vocab>,
) -> Result<DatasetBundle> {
    let (kept, delta) = filter_usable(&load.instances);
    let (final_set, dedup_removed) = match kind {
        VariantKind::Duplicate => (kept, None),
        VariantKind::Unique => {
            let deduped = deduplicate(&kept);
            let removed = kept.len() - deduped.len();
            (deduped, Some(removed))
        }
    };

    let mut stats = CorpusStats {
        raw: load.instances.len() + load.rejects.len(),
        load_rejects: load.rejects.len(),
        after_type_filter: load.instances.len() - delta.total_dropped(),
        after_dedup: dedup_removed.map(|r| load.instances.len() - delta.total_dropped() - r),
        drop_reasons: delta.reasons.clone(),
        over_length_510: None,
        per_bug_type: BTreeMap::new(),
        per_project: BTreeMap::new(),
    };
    if let Some(removed) = dedup_removed {
        if removed > 0 {
            stats
                .drop_reasons
                .insert("duplicate_pair".to_string(), removed);
        }
    }

    let splits = split(&final_set, seed)?;
    let mut bundle = DatasetBundle {
        name: BundleName {
            kind,
            size: load.size,
        },
        train: splits.train,
        valid: splits.valid,
        test: splits.test,
        stats,
        split_seed: seed,
        source_release: load.source_release.clone(),
    };
    bundle.stats = compute_stats(&bundle, vocab);
    Ok(bundle)
}
