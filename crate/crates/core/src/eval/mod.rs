//! Exact-match scoring and the RQ1/RQ2 analyses.

mod render;

pub use render::{render_comparison, render_report, render_stats_table, render_timing_table};

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

use crate::corpus::BugInstance;
use crate::predictions::PredictionRecord;
use crate::text::normalize_ws;
use crate::tokenizer::{code_token_len, Vocab};
use crate::{CoreError, Result};

/// Matched/total cell of a breakdown table.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellStat {
    pub matched: usize,
    pub total: usize,
}

impl CellStat {
    pub fn ratio(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.matched as f64 / self.total as f64
        }
    }
}

/// Percentage formatted the way the published tables print it: truncated
/// (not rounded) at two decimals, so 92/468 renders as 19.65%.
pub fn format_pct(matched: usize, total: usize) -> String {
    if total == 0 {
        return "0.00".to_string();
    }
    let hundredths = matched * 10_000 / total;
    format!("{}.{:02}", hundredths / 100, hundredths % 100)
}

/// One length bucket of the patch-length analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthBucket {
    pub label: String,
    pub stat: CellStat,
}

/// A long matched patch, reported like the published length table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongPatch {
    pub project: String,
    pub commit_prefix: String,
    pub length: usize,
    pub instance_id: String,
}

/// Wall-clock aggregate over one prediction run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub total_ms: f64,
    pub mean_ms: f64,
    pub max_ms: f64,
}

/// Full evaluation output for one (dataset, approach) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub dataset: String,
    pub approach: String,
    pub matched: usize,
    pub total: usize,
    pub accuracy: f64,
    pub per_bug_type: BTreeMap<String, CellStat>,
    pub per_project: BTreeMap<String, CellStat>,
    /// Test projects with no instance in the training split.
    pub zero_shot_projects: Vec<String>,
    pub length_buckets: Vec<LengthBucket>,
    pub longest_matches: Vec<LongPatch>,
    /// Matched instances whose patch text appears nowhere in the training
    /// split (neither as a fix nor as a buggy line).
    pub novel_fixes: Vec<String>,
    pub timing: TimingSummary,
    /// Checksum of the test split the predictions were scored against.
    pub test_checksum: String,
}

impl EvaluationReport {
    pub fn accuracy_display(&self) -> String {
        format!(
            "{} / {} ({}%)",
            self.matched,
            self.total,
            format_pct(self.matched, self.total)
        )
    }
}

/// Exact-match per the experiment's accuracy metric: whitespace-normalized
/// texts must be identical.
pub fn exact_match(predicted: &str, reference: &str) -> bool {
    normalize_ws(predicted) == normalize_ws(reference)
}

/// Number of longest matched patches listed in the report.
pub const LONGEST_PATCHES_LISTED: usize = 5;

/// Score a prediction run against its test split and assemble the report.
///
/// Every test instance must be covered by exactly one prediction record.
/// `train` enables the zero-shot-project and novelty analyses; `vocab`
/// enables the patch-length analysis.
pub fn score(
    predictions: &[PredictionRecord],
    test: &[BugInstance],
    train: Option<&[BugInstance]>,
    vocab: Option<&Vocab>,
    dataset: &str,
    approach: &str,
    test_checksum: &str,
) -> Result<EvaluationReport> {
    let by_id = index_predictions(predictions, test)?;

    let mut matched = 0usize;
    let mut per_bug_type: BTreeMap<String, CellStat> = BTreeMap::new();
    let mut per_project: BTreeMap<String, CellStat> = BTreeMap::new();
    let mut matched_instances: Vec<(&BugInstance, &PredictionRecord)> = Vec::new();

    for instance in test {
        let record = by_id[instance.id.as_str()];
        let hit = exact_match(&record.top1().text, &instance.source_after_fix);
        if hit {
            matched += 1;
            matched_instances.push((instance, record));
        }
        let type_cell = per_bug_type.entry(instance.bug_type.clone()).or_default();
        type_cell.total += 1;
        type_cell.matched += hit as usize;
        let project_cell = per_project
            .entry(instance.project_name.clone())
            .or_default();
        project_cell.total += 1;
        project_cell.matched += hit as usize;
    }

    let zero_shot_projects = match train {
        Some(train) => {
            let train_projects: BTreeSet<&str> =
                train.iter().map(|i| i.project_name.as_str()).collect();
            per_project
                .keys()
                .filter(|p| !train_projects.contains(p.as_str()))
                .cloned()
                .collect()
        }
        None => Vec::new(),
    };

    let (length_buckets, longest_matches) = match vocab {
        Some(vocab) => length_analysis(test, &matched_instances, vocab),
        None => (Vec::new(), Vec::new()),
    };

    let novel_fixes = match train {
        Some(train) => novelty_check(&matched_instances, train),
        None => Vec::new(),
    };

    let timing = timing_summary(predictions);

    Ok(EvaluationReport {
        dataset: dataset.to_string(),
        approach: approach.to_string(),
        matched,
        total: test.len(),
        accuracy: if test.is_empty() {
            0.0
        } else {
            matched as f64 / test.len() as f64
        },
        per_bug_type,
        per_project,
        zero_shot_projects,
        length_buckets,
        longest_matches,
        novel_fixes,
        timing,
        test_checksum: test_checksum.to_string(),
    })
}

fn index_predictions<'a>(
    predictions: &'a [PredictionRecord],
    test: &[BugInstance],
) -> Result<BTreeMap<&'a str, &'a PredictionRecord>> {
    let mut by_id: BTreeMap<&str, &PredictionRecord> = BTreeMap::new();
    let mut duplicated: Vec<String> = Vec::new();
    for record in predictions {
        if by_id.insert(&record.instance_id, record).is_some() {
            duplicated.push(record.instance_id.clone());
        }
    }
    let missing: Vec<String> = test
        .iter()
        .filter(|i| !by_id.contains_key(i.id.as_str()))
        .map(|i| i.id.clone())
        .collect();
    let test_ids: BTreeSet<&str> = test.iter().map(|i| i.id.as_str()).collect();
    let extras: Vec<String> = by_id
        .keys()
        .filter(|id| !test_ids.contains(**id))
        .map(|id| id.to_string())
        .collect();

    if !missing.is_empty() || !duplicated.is_empty() || !extras.is_empty() {
        let mut sample: Vec<String> = missing
            .iter()
            .chain(&duplicated)
            .chain(&extras)
            .cloned()
            .collect();
        sample.truncate(8);
        return Err(CoreError::PredictionCoverage {
            missing: missing.len(),
            duplicated: duplicated.len(),
            sample,
        });
    }
    Ok(by_id)
}

/// Sorted per-type rows: ratio descending, ties broken by larger
/// denominator, then by type name.
pub fn top_bug_types(report: &EvaluationReport, k: usize) -> Vec<(String, CellStat)> {
    let mut rows: Vec<(String, CellStat)> = report
        .per_bug_type
        .iter()
        .map(|(t, c)| (t.clone(), *c))
        .collect();
    rows.sort_by(|a, b| {
        b.1.ratio()
            .partial_cmp(&a.1.ratio())
            .expect("ratios are finite")
            .then_with(|| b.1.total.cmp(&a.1.total))
            .then_with(|| a.0.cmp(&b.0))
    });
    rows.truncate(k);
    rows
}

const BUCKET_EDGES: [(usize, usize, &str); 4] = [
    (1, 20, "[1,20]"),
    (21, 50, "(20,50]"),
    (51, 100, "(50,100]"),
    (101, usize::MAX, "(100,inf)"),
];

/// Bucketed success rates over reference patch lengths, plus the longest
/// matched patches with their 12-char commit prefixes.
pub fn length_analysis(
    test: &[BugInstance],
    matched: &[(&BugInstance, &PredictionRecord)],
    vocab: &Vocab,
) -> (Vec<LengthBucket>, Vec<LongPatch>) {
    let matched_ids: BTreeSet<&str> = matched.iter().map(|(i, _)| i.id.as_str()).collect();

    let mut buckets: Vec<LengthBucket> = BUCKET_EDGES
        .iter()
        .map(|(_, _, label)| LengthBucket {
            label: label.to_string(),
            stat: CellStat::default(),
        })
        .collect();
    for instance in test {
        let length = code_token_len(vocab, &instance.source_after_fix);
        let Some(slot) = BUCKET_EDGES.iter().position(|(lo, hi, _)| {
            length >= *lo && length <= *hi
        }) else {
            continue; // length 0: empty patch, no bucket
        };
        buckets[slot].stat.total += 1;
        buckets[slot].stat.matched += matched_ids.contains(instance.id.as_str()) as usize;
    }

    let mut longest: Vec<LongPatch> = matched
        .iter()
        .map(|(instance, _)| LongPatch {
            project: instance.project_name.clone(),
            commit_prefix: instance.commit_prefix().to_string(),
            length: code_token_len(vocab, &instance.source_after_fix),
            instance_id: instance.id.clone(),
        })
        .collect();
    longest.sort_by(|a, b| {
        b.length
            .cmp(&a.length)
            .then_with(|| a.instance_id.cmp(&b.instance_id))
    });
    longest.truncate(LONGEST_PATCHES_LISTED);
    (buckets, longest)
}

/// A matched patch is novel iff its normalized text equals no training-split
/// fixed statement and no training-split buggy statement.
pub fn novelty_check(
    matched: &[(&BugInstance, &PredictionRecord)],
    train: &[BugInstance],
) -> Vec<String> {
    let mut known: BTreeSet<String> = BTreeSet::new();
    for instance in train {
        known.insert(normalize_ws(&instance.source_after_fix));
        known.insert(normalize_ws(&instance.source_before_fix));
    }
    matched
        .iter()
        .filter(|(_, record)| !known.contains(&normalize_ws(&record.top1().text)))
        .map(|(instance, _)| instance.id.clone())
        .collect()
}

fn timing_summary(predictions: &[PredictionRecord]) -> TimingSummary {
    if predictions.is_empty() {
        return TimingSummary::default();
    }
    let times: Vec<f64> = predictions.iter().map(|r| r.wall_clock_ms).collect();
    let total: f64 = times.iter().sum();
    TimingSummary {
        total_ms: total,
        mean_ms: total / times.len() as f64,
        max_ms: times.iter().cloned().fold(0.0, f64::max),
    }
}

/// Side-by-side accuracy table for runs over the same test split.
pub fn compare_runs(reports: &[&EvaluationReport]) -> Result<String> {
    let Some(first) = reports.first() else {
        return Err(CoreError::Invalid("no reports to compare".into()));
    };
    for report in &reports[1..] {
        if report.test_checksum != first.test_checksum {
            return Err(CoreError::SplitMismatch {
                left: format!("{} ({})", first.approach, first.test_checksum),
                right: format!("{} ({})", report.approach, report.test_checksum),
            });
        }
    }
    Ok(render_comparison(reports))
}
