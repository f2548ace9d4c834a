//! Bundle export and reload with checksummed manifests.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BugInstance, BundleName, CorpusStats, DatasetBundle};
use crate::text::sha256_hex;
use crate::{CoreError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
const MANIFEST_VERSION: u32 = 1;

/// One exported split file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitFile {
    pub path: String,
    pub count: usize,
    pub sha256: String,
}

/// Provenance record written next to the split files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BundleManifest {
    pub format_version: u32,
    pub name: BundleName,
    pub split_seed: u64,
    pub source_release: String,
    pub train: SplitFile,
    pub valid: SplitFile,
    pub test: SplitFile,
    pub stats: CorpusStats,
}

impl BundleManifest {
    pub fn load(dir: &Path) -> Result<BundleManifest> {
        let path = dir.join(MANIFEST_FILE);
        let bytes = std::fs::read(&path).map_err(|e| CoreError::io(&path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| CoreError::MalformedRecord {
            path,
            line: e.line(),
            message: e.to_string(),
        })
    }

    /// Checksum identifying the test split; reports compare this before
    /// comparing accuracies.
    pub fn test_checksum(&self) -> &str {
        &self.test.sha256
    }
}

fn render_split(instances: &[BugInstance]) -> String {
    let mut out = String::new();
    for instance in instances {
        out.push_str(&serde_json::to_string(instance).expect("instance serializes"));
        out.push('\n');
    }
    out
}

/// Write train/valid/test as line-delimited records plus `manifest.json`.
///
/// Serialization is fully deterministic, so re-exporting the same bundle is
/// byte-identical.
pub fn export_bundle(bundle: &DatasetBundle, out_dir: &Path) -> Result<BundleManifest> {
    std::fs::create_dir_all(out_dir).map_err(|e| CoreError::io(out_dir, e))?;

    let mut files = Vec::new();
    for (split_name, instances) in bundle.splits() {
        let rendered = render_split(instances);
        let file_name = format!("{split_name}.jsonl");
        let path = out_dir.join(&file_name);
        std::fs::write(&path, rendered.as_bytes()).map_err(|e| CoreError::io(&path, e))?;
        files.push(SplitFile {
            path: file_name,
            count: instances.len(),
            sha256: sha256_hex(rendered.as_bytes()),
        });
    }
    let [train, valid, test]: [SplitFile; 3] = files.try_into().expect("three splits");

    let manifest = BundleManifest {
        format_version: MANIFEST_VERSION,
        name: bundle.name,
        split_seed: bundle.split_seed,
        source_release: bundle.source_release.clone(),
        train,
        valid,
        test,
        stats: bundle.stats.clone(),
    };
    let manifest_path = out_dir.join(MANIFEST_FILE);
    let rendered = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&manifest_path, rendered).map_err(|e| CoreError::io(&manifest_path, e))?;
    Ok(manifest)
}

fn read_split(dir: &Path, file: &SplitFile) -> Result<Vec<BugInstance>> {
    let path = dir.join(&file.path);
    let bytes = std::fs::read(&path).map_err(|e| CoreError::io(&path, e))?;
    let actual = sha256_hex(&bytes);
    if actual != file.sha256 {
        return Err(CoreError::ChecksumMismatch {
            file: file.path.clone(),
            expected: file.sha256.clone(),
            actual,
        });
    }
    let text = String::from_utf8_lossy(&bytes);
    let mut instances = Vec::with_capacity(file.count);
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let instance: BugInstance =
            serde_json::from_str(line).map_err(|e| CoreError::MalformedRecord {
                path: path.clone(),
                line: idx + 1,
                message: e.to_string(),
            })?;
        instances.push(instance);
    }
    Ok(instances)
}

/// Reload an exported bundle, verifying every checksum.
pub fn load_bundle(dir: &Path) -> Result<DatasetBundle> {
    let manifest = BundleManifest::load(dir)?;
    Ok(DatasetBundle {
        name: manifest.name,
        train: read_split(dir, &manifest.train)?,
        valid: read_split(dir, &manifest.valid)?,
        test: read_split(dir, &manifest.test)?,
        stats: manifest.stats,
        split_seed: manifest.split_seed,
        source_release: manifest.source_release,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{prepare_bundle, LoadOutcome, VariantKind, VariantSize};

    fn bundle() -> DatasetBundle {
        let instances = (0..10)
            .map(|i| BugInstance {
                id: format!("{i:012x}:{i}"),
                project_name: "p".into(),
                fix_commit_sha1: format!("{i:040x}"),
                bug_type: "T".into(),
                source_before_fix: format!("a{i}"),
                source_after_fix: format!("b{i}"),
                extra: serde_json::Map::new(),
            })
            .collect();
        let outcome = LoadOutcome {
            instances,
            rejects: Vec::new(),
            size: VariantSize::Small,
            source_release: "fixture@sha256:0".into(),
        };
        prepare_bundle(&outcome, VariantKind::Duplicate, 11, None).unwrap()
    }

    #[test]
    fn export_produces_three_files_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        export_bundle(&bundle(), dir.path()).unwrap();
        for name in ["train.jsonl", "valid.jsonl", "test.jsonl", MANIFEST_FILE] {
            assert!(dir.path().join(name).exists(), "{name} missing");
        }
    }

    #[test]
    fn export_load_round_trip_and_reexport_identical() {
        let dir = tempfile::tempdir().unwrap();
        let original = bundle();
        export_bundle(&original, dir.path()).unwrap();
        let loaded = load_bundle(dir.path()).unwrap();
        assert_eq!(loaded, original);

        let first = std::fs::read(dir.path().join("train.jsonl")).unwrap();
        export_bundle(&loaded, dir.path()).unwrap();
        let second = std::fs::read(dir.path().join("train.jsonl")).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn corrupted_split_file_is_rejected_on_load() {
        let dir = tempfile::tempdir().unwrap();
        export_bundle(&bundle(), dir.path()).unwrap();
        let path = dir.path().join("test.jsonl");
        let mut bytes = std::fs::read(&path).unwrap();
        let idx = bytes.len() / 2;
        bytes[idx] ^= 0x01;
        std::fs::write(&path, bytes).unwrap();

        match load_bundle(dir.path()) {
            Err(CoreError::ChecksumMismatch { file, .. }) => assert_eq!(file, "test.jsonl"),
            other => panic!("expected checksum mismatch, got {other:?}"),
        }
    }
}
