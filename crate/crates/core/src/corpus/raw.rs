//! Raw release ingestion.

use std::path::Path;

use serde_json::Value;

use super::{BugInstance, VariantSize};
use crate::text::sha256_hex;
use crate::{CoreError, Result};

/// A raw record that could not become a [`BugInstance`].
#[derive(Debug, Clone, serde::Serialize)]
pub struct RejectedRecord {
    /// Ordinal of the record in the release file (0-based).
    pub ordinal: usize,
    pub reason: String,
    pub raw: Value,
}

/// Result of loading one release file.
#[derive(Debug, Clone)]
pub struct LoadOutcome {
    pub instances: Vec<BugInstance>,
    pub rejects: Vec<RejectedRecord>,
    pub size: VariantSize,
    /// `<file name>@sha256:<hex>` of the raw bytes.
    pub source_release: String,
}

/// Load a ManySStuBs4J release file.
///
/// Both published layouts are accepted: a single JSON array of objects, or
/// line-delimited JSON. Records missing any of `bugType`, `projectName`,
/// `fixCommitSHA1` are collected as rejects instead of aborting the load.
pub fn load_raw(path: &Path, size: VariantSize) -> Result<LoadOutcome> {
    let bytes = std::fs::read(path).map_err(|e| CoreError::io(path, e))?;
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    let source_release = format!("{file_name}@sha256:{}", sha256_hex(&bytes));

    let text = String::from_utf8_lossy(&bytes);
    let records = parse_records(path, &text)?;

    let mut instances = Vec::with_capacity(records.len());
    let mut rejects = Vec::new();
    for (ordinal, record) in records.into_iter().enumerate() {
        match instance_from_value(record, ordinal) {
            Ok(instance) => instances.push(instance),
            Err((reason, raw)) => rejects.push(RejectedRecord {
                ordinal,
                reason,
                raw,
            }),
        }
    }

    Ok(LoadOutcome {
        instances,
        rejects,
        size,
        source_release,
    })
}

/// Auto-detect array-of-objects vs line-delimited layout.
fn parse_records(path: &Path, text: &str) -> Result<Vec<Value>> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        let value: Value =
            serde_json::from_str(trimmed).map_err(|e| CoreError::MalformedRecord {
                path: path.to_path_buf(),
                line: e.line(),
                message: e.to_string(),
            })?;
        match value {
            Value::Array(items) => Ok(items),
            _ => unreachable!("leading '[' parsed to non-array"),
        }
    } else {
        let mut records = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let value: Value =
                serde_json::from_str(line).map_err(|e| CoreError::MalformedRecord {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    message: e.to_string(),
                })?;
            records.push(value);
        }
        Ok(records)
    }
}

fn instance_from_value(value: Value, ordinal: usize) -> std::result::Result<BugInstance, (String, Value)> {
    let Value::Object(mut map) = value else {
        return Err(("record is not a JSON object".to_string(), value));
    };

    let take_required = |field: &str, map: &mut serde_json::Map<String, Value>| {
        match map.remove(field) {
            Some(Value::String(s)) if !s.is_empty() => Ok(s),
            Some(other) => {
                map.insert(field.to_string(), other);
                Err(format!("field {field} is not a non-empty string"))
            }
            None => Err(format!("missing field {field}")),
        }
    };

    let bug_type = take_required("bugType", &mut map);
    let project_name = take_required("projectName", &mut map);
    let fix_commit_sha1 = take_required("fixCommitSHA1", &mut map);
    let (bug_type, project_name, fix_commit_sha1) = match (bug_type, project_name, fix_commit_sha1)
    {
        (Ok(b), Ok(p), Ok(f)) => (b, p, f),
        (b, p, f) => {
            let reasons: Vec<String> = [b.err(), p.err(), f.err()].into_iter().flatten().collect();
            return Err((reasons.join("; "), Value::Object(map)));
        }
    };

    let take_text = |field: &str, map: &mut serde_json::Map<String, Value>| match map.remove(field)
    {
        Some(Value::String(s)) => s,
        Some(other) => {
            map.insert(field.to_string(), other);
            String::new()
        }
        None => String::new(),
    };
    let source_before_fix = take_text("sourceBeforeFix", &mut map);
    let source_after_fix = take_text("sourceAfterFix", &mut map);

    let prefix_end = fix_commit_sha1
        .char_indices()
        .nth(12)
        .map_or(fix_commit_sha1.len(), |(i, _)| i);
    let id = format!("{}:{ordinal}", &fix_commit_sha1[..prefix_end]);

    Ok(BugInstance {
        id,
        project_name,
        fix_commit_sha1,
        bug_type,
        source_before_fix,
        source_after_fix,
        extra: map,
    })
}

/// Write the rejects report as line-delimited JSON.
pub fn write_rejects(path: &Path, rejects: &[RejectedRecord]) -> Result<()> {
    let mut out = String::new();
    for reject in rejects {
        out.push_str(&serde_json::to_string(reject).expect("reject serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| CoreError::io(path, e))
}
