//! Prediction file format: line-delimited candidate records.
//!
//! One line per (instance, rank): `{instance_id, rank, text, score,
//! wall_clock_ms}`. Run provenance (model tag, vocab hash, test-split
//! checksum, resolved config) lives in a sidecar meta file so the record
//! stream stays exactly this shape.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{CoreError, Result};

/// One beam candidate as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRow {
    pub instance_id: String,
    /// 1-based; rank 1 is the top-1 candidate accuracy is computed on.
    pub rank: u32,
    pub text: String,
    /// Length-normalized log-probability.
    pub score: f64,
    pub wall_clock_ms: f64,
}

/// All candidates for one test instance, sorted by rank.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub instance_id: String,
    pub candidates: Vec<CandidateRow>,
    pub wall_clock_ms: f64,
}

impl PredictionRecord {
    pub fn top1(&self) -> &CandidateRow {
        &self.candidates[0]
    }
}

/// Sidecar provenance for a prediction run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionMeta {
    pub model_tag: String,
    pub vocab_hash: String,
    pub beam_size: usize,
    pub test_checksum: String,
    /// Full resolved experiment config, echoed for provenance.
    pub config: serde_json::Value,
}

pub const META_SUFFIX: &str = ".meta.json";

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let mut out = String::new();
    for record in records {
        for candidate in &record.candidates {
            out.push_str(&serde_json::to_string(candidate).expect("candidate serializes"));
            out.push('\n');
        }
    }
    std::fs::write(path, out).map_err(|e| CoreError::io(path, e))
}

/// Read and regroup a prediction file. Rows are grouped by instance id and
/// sorted by rank; ranks must be 1..=k without gaps or repeats.
pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    let mut rows: Vec<CandidateRow> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: CandidateRow =
            serde_json::from_str(line).map_err(|e| CoreError::MalformedRecord {
                path: path.to_path_buf(),
                line: idx + 1,
                message: e.to_string(),
            })?;
        rows.push(row);
    }
    group_rows(rows)
}

/// Group flat rows into per-instance records (first-seen instance order).
pub fn group_rows(rows: Vec<CandidateRow>) -> Result<Vec<PredictionRecord>> {
    let mut order: Vec<String> = Vec::new();
    let mut by_id: std::collections::HashMap<String, Vec<CandidateRow>> =
        std::collections::HashMap::new();
    for row in rows {
        if !by_id.contains_key(&row.instance_id) {
            order.push(row.instance_id.clone());
        }
        by_id.entry(row.instance_id.clone()).or_default().push(row);
    }

    let mut records = Vec::with_capacity(order.len());
    for id in order {
        let mut candidates = by_id.remove(&id).expect("id came from map");
        candidates.sort_by_key(|c| c.rank);
        for (i, candidate) in candidates.iter().enumerate() {
            if candidate.rank != i as u32 + 1 {
                return Err(CoreError::Invalid(format!(
                    "instance {id}: candidate ranks are not contiguous from 1 (found rank {} at position {i})",
                    candidate.rank
                )));
            }
        }
        let wall_clock_ms = candidates.first().map_or(0.0, |c| c.wall_clock_ms);
        records.push(PredictionRecord {
            instance_id: id,
            candidates,
            wall_clock_ms,
        });
    }
    Ok(records)
}

pub fn write_meta(predictions_path: &Path, meta: &PredictionMeta) -> Result<()> {
    let path = meta_path(predictions_path);
    let rendered = serde_json::to_string_pretty(meta).expect("meta serializes");
    std::fs::write(&path, rendered).map_err(|e| CoreError::io(&path, e))
}

pub fn read_meta(predictions_path: &Path) -> Result<PredictionMeta> {
    let path = meta_path(predictions_path);
    let bytes = std::fs::read(&path).map_err(|e| CoreError::io(&path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| CoreError::MalformedRecord {
        path,
        line: e.line(),
        message: e.to_string(),
    })
}

fn meta_path(predictions_path: &Path) -> std::path::PathBuf {
    let mut name = predictions_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.push_str(META_SUFFIX);
    predictions_path.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, rank: u32, text: &str) -> CandidateRow {
        CandidateRow {
            instance_id: id.into(),
            rank,
            text: text.into(),
            score: -0.5 * rank as f64,
            wall_clock_ms: 3.0,
        }
    }

    #[test]
    fn rows_regroup_sorted_by_rank() {
        let rows = vec![row("a", 2, "y"), row("b", 1, "z"), row("a", 1, "x")];
        let records = group_rows(rows).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].instance_id, "a");
        assert_eq!(records[0].top1().text, "x");
        assert_eq!(records[0].candidates.len(), 2);
    }

    #[test]
    fn gapped_ranks_are_rejected() {
        let rows = vec![row("a", 1, "x"), row("a", 3, "y")];
        assert!(group_rows(rows).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("predictions.jsonl");
        let records = group_rows(vec![row("a", 1, "x"), row("a", 2, "y")]).unwrap();
        write_predictions(&path, &records).unwrap();
        let reloaded = read_predictions(&path).unwrap();
        assert_eq!(reloaded, records);
    }
}
