//! Per-bundle statistics.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::{CorpusStats, DatasetBundle};
use crate::tokenizer::{code_token_len, Vocab};

/// How many instances exceed the encoder's 510-token payload capacity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverLengthCount {
    /// Instances whose buggy or fixed side is longer than 510 unframed tokens.
    pub over: usize,
    /// Instances measured.
    pub total: usize,
}

impl OverLengthCount {
    pub fn pooled(self, other: OverLengthCount) -> OverLengthCount {
        OverLengthCount {
            over: self.over + other.over,
            total: self.total + other.total,
        }
    }
}

/// Recompute the full stats block for a built bundle.
///
/// Stage counts and drop reasons are carried over from the pipeline; the
/// histograms and over-length counts are derived from the bundle contents.
/// Over-length instances are counted, never removed; the model truncates
/// at encode time instead.
pub fn compute_stats(bundle: &DatasetBundle, vocab: Option<&Vocab>) -> CorpusStats {
    let mut stats = bundle.stats.clone();

    let mut per_bug_type: BTreeMap<String, usize> = BTreeMap::new();
    let mut per_project: BTreeMap<String, usize> = BTreeMap::new();
    let mut over = 0usize;
    let mut total = 0usize;
    for (_, instances) in bundle.splits() {
        for instance in instances {
            *per_bug_type.entry(instance.bug_type.clone()).or_insert(0) += 1;
            *per_project
                .entry(instance.project_name.clone())
                .or_insert(0) += 1;
            if let Some(vocab) = vocab {
                total += 1;
                let buggy = code_token_len(vocab, &instance.source_before_fix);
                let fixed = code_token_len(vocab, &instance.source_after_fix);
                if buggy > 510 || fixed > 510 {
                    over += 1;
                }
            }
        }
    }

    stats.per_bug_type = per_bug_type;
    stats.per_project = per_project;
    stats.over_length_510 = vocab.map(|_| OverLengthCount { over, total });
    stats
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{prepare_bundle, BugInstance, LoadOutcome, VariantKind, VariantSize};
    use crate::tokenizer::train_toy_vocab;

    fn outcome(instances: Vec<BugInstance>) -> LoadOutcome {
        LoadOutcome {
            instances,
            rejects: Vec::new(),
            size: VariantSize::Small,
            source_release: "fixture@sha256:0".into(),
        }
    }

    fn inst(i: usize, bug_type: &str, project: &str, before: &str, after: &str) -> BugInstance {
        BugInstance {
            id: format!("{i:012x}:{i}"),
            project_name: project.into(),
            fix_commit_sha1: format!("{i:040x}"),
            bug_type: bug_type.into(),
            source_before_fix: before.into(),
            source_after_fix: after.into(),
            extra: serde_json::Map::new(),
        }
    }

    #[test]
    fn histograms_cover_all_splits_and_over_length_counts() {
        let vocab = train_toy_vocab(&["a = b ;".to_string()], 0).unwrap();
        let long = "x".repeat(600); // byte-level toy vocab: 600 tokens
        let mut instances: Vec<BugInstance> = (0..11)
            .map(|i| inst(i, "CHANGE_OPERATOR", "proj", "a = b ;", "a = c ;"))
            .collect();
        instances.push(inst(11, "CHANGE_OPERAND", "other", &long, "ok"));

        let bundle =
            prepare_bundle(&outcome(instances), VariantKind::Duplicate, 3, Some(&vocab)).unwrap();
        let stats = &bundle.stats;
        assert_eq!(stats.per_bug_type["CHANGE_OPERATOR"], 11);
        assert_eq!(stats.per_bug_type["CHANGE_OPERAND"], 1);
        assert_eq!(stats.per_project["proj"], 11);
        assert_eq!(stats.over_length_510.unwrap().over, 1);
        assert_eq!(stats.over_length_510.unwrap().total, 12);
        // Conservation: raw = kept + dropped (+ rejects).
        let dropped: usize = stats.drop_reasons.values().sum();
        assert_eq!(stats.raw, stats.after_type_filter + dropped + stats.load_rejects);
    }

    #[test]
    fn empty_histogram_without_instances_is_all_zero() {
        let bundle = DatasetBundle {
            name: crate::corpus::BundleName {
                kind: VariantKind::Duplicate,
                size: VariantSize::Small,
            },
            train: vec![],
            valid: vec![],
            test: vec![],
            stats: CorpusStats::default(),
            split_seed: 0,
            source_release: "none".into(),
        };
        let stats = compute_stats(&bundle, None);
        assert!(stats.per_bug_type.is_empty());
        assert!(stats.per_project.is_empty());
        assert!(stats.over_length_510.is_none());
    }
}
