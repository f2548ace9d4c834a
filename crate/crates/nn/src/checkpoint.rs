//! Self-describing binary checkpoints.
//!
//! Layout: magic, format version, a JSON header (model kind, config,
//! vocabulary hash, tensor shapes, training progress), raw little-endian
//! f64 payloads for parameters and optional Adam state, and a SHA-256
//! trailer over everything before it. Loads verify the trailer first, so
//! truncation or bit rot fails loudly before any tensor is touched.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adam::Adam;
use crate::model::{GeneratorSpecials, ModelKind, PatchModel};
use crate::{lstm::BaselineModel, transformer::TransformerModel};
use crate::{NnError, Result};

const MAGIC: &[u8; 8] = b"APRCKPT\x01";
const FORMAT_VERSION: u32 = 1;

/// Environment variable naming the directory encoder checkpoints are
/// cached in when `encoder_source` is a registry id rather than a path.
pub const ENCODER_CACHE_ENV: &str = "APR_ENCODER_CACHE";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    rows: usize,
    cols: usize,
}

/// Training position stored with a checkpoint so fine-tuning can resume
/// with identical results.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainProgress {
    pub step: usize,
    pub best_metric: Option<f64>,
    pub best_step: usize,
    pub validations_since_best: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    kind: ModelKind,
    config: serde_json::Value,
    vocab_hash: String,
    specials: GeneratorSpecials,
    tensors: Vec<TensorInfo>,
    has_optimizer: bool,
    #[serde(default)]
    progress: TrainProgress,
}

/// A parsed checkpoint, not yet bound to a model.
pub struct LoadedCheckpoint {
    pub kind: ModelKind,
    pub config: serde_json::Value,
    pub vocab_hash: String,
    pub specials: GeneratorSpecials,
    pub progress: TrainProgress,
    pub tensors: Vec<(String, Array2<f64>)>,
    pub adam_state: Option<(Vec<Array2<f64>>, Vec<Array2<f64>>, u64)>,
}

fn push_array(buf: &mut Vec<u8>, array: &Array2<f64>) {
    for &value in array.iter() {
        buf.extend_from_slice(&value.to_le_bytes());
    }
}

fn read_array(bytes: &[u8], offset: &mut usize, rows: usize, cols: usize) -> Option<Array2<f64>> {
    let need = rows * cols * 8;
    if *offset + need > bytes.len() {
        return None;
    }
    let mut array = Array2::zeros((rows, cols));
    for value in array.iter_mut() {
        let chunk: [u8; 8] = bytes[*offset..*offset + 8].try_into().ok()?;
        *value = f64::from_le_bytes(chunk);
        *offset += 8;
    }
    Some(array)
}

/// Write a checkpoint for a model, optionally with optimizer state so
/// training can resume exactly.
pub fn save_model(
    path: &Path,
    model: &dyn PatchModel,
    optimizer: Option<&Adam>,
    progress: &TrainProgress,
) -> Result<()> {
    let params = model.params();
    let header = Header {
        kind: model.kind(),
        config: model.config_json(),
        vocab_hash: model.vocab_hash().to_string(),
        specials: model.specials(),
        tensors: params
            .iter()
            .map(|(name, value)| TensorInfo {
                name: name.to_string(),
                rows: value.nrows(),
                cols: value.ncols(),
            })
            .collect(),
        has_optimizer: optimizer.is_some(),
        progress: progress.clone(),
    };
    let header_json = serde_json::to_vec(&header).expect("header serializes");

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header_json);
    for (_, value) in params.iter() {
        push_array(&mut buf, value);
    }
    if let Some(adam) = optimizer {
        let (m, v, t) = adam.state();
        for array in m {
            push_array(&mut buf, array);
        }
        for array in v {
            push_array(&mut buf, array);
        }
        buf.extend_from_slice(&t.to_le_bytes());
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);

    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| NnError::Io {
                path: parent.to_path_buf(),
                source: e,
            })?;
        }
    }
    std::fs::write(path, buf).map_err(|e| NnError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn format_err(path: &Path, message: impl Into<String>) -> NnError {
    NnError::CheckpointFormat {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Parse and integrity-check a checkpoint file.
pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    let bytes = std::fs::read(path).map_err(|e| NnError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    if bytes.len() < MAGIC.len() + 4 + 8 + 32 {
        return Err(format_err(path, "file too short to be a checkpoint"));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 32);
    let digest = Sha256::digest(body);
    if digest.as_slice() != trailer {
        return Err(format_err(path, "integrity check failed (truncated or corrupted)"));
    }
    if &body[..8] != MAGIC {
        return Err(format_err(path, "bad magic"));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(NnError::CheckpointVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let header_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
    if 20 + header_len > body.len() {
        return Err(format_err(path, "header extends past end of file"));
    }
    let header: Header = serde_json::from_slice(&body[20..20 + header_len])
        .map_err(|e| format_err(path, format!("bad header: {e}")))?;

    let mut offset = 20 + header_len;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for info in &header.tensors {
        let array = read_array(body, &mut offset, info.rows, info.cols)
            .ok_or_else(|| format_err(path, format!("tensor {} truncated", info.name)))?;
        tensors.push((info.name.clone(), array));
    }
    let adam_state = if header.has_optimizer {
        let mut m = Vec::with_capacity(header.tensors.len());
        for info in &header.tensors {
            m.push(
                read_array(body, &mut offset, info.rows, info.cols)
                    .ok_or_else(|| format_err(path, "optimizer m truncated"))?,
            );
        }
        let mut v = Vec::with_capacity(header.tensors.len());
        for info in &header.tensors {
            v.push(
                read_array(body, &mut offset, info.rows, info.cols)
                    .ok_or_else(|| format_err(path, "optimizer v truncated"))?,
            );
        }
        if offset + 8 > body.len() {
            return Err(format_err(path, "optimizer step truncated"));
        }
        let t = u64::from_le_bytes(body[offset..offset + 8].try_into().expect("8 bytes"));
        offset += 8;
        Some((m, v, t))
    } else {
        None
    };
    if offset != body.len() {
        return Err(format_err(path, "trailing bytes after payload"));
    }

    Ok(LoadedCheckpoint {
        kind: header.kind,
        config: header.config,
        vocab_hash: header.vocab_hash,
        specials: header.specials,
        progress: header.progress,
        tensors,
        adam_state,
    })
}

fn fill_params(model: &mut dyn PatchModel, loaded: &LoadedCheckpoint) -> Result<()> {
    let params = model.params_mut();
    if params.len() != loaded.tensors.len() {
        return Err(NnError::Config(format!(
            "checkpoint has {} tensors, model expects {}",
            loaded.tensors.len(),
            params.len()
        )));
    }
    for ((name, value), (ckpt_name, ckpt_value)) in params.iter_mut().zip(&loaded.tensors) {
        if name != ckpt_name {
            return Err(NnError::Config(format!(
                "tensor order mismatch: model {name}, checkpoint {ckpt_name}"
            )));
        }
        if value.dim() != ckpt_value.dim() {
            return Err(NnError::ShapeMismatch {
                name: name.to_string(),
                found: vec![ckpt_value.nrows(), ckpt_value.ncols()],
                expected: vec![value.nrows(), value.ncols()],
            });
        }
        value.assign(ckpt_value);
    }
    Ok(())
}

fn check_vocab_hash(loaded: &LoadedCheckpoint, expected: Option<&str>) -> Result<()> {
    if let Some(expected) = expected {
        if expected != loaded.vocab_hash {
            return Err(NnError::VocabHashMismatch {
                checkpoint: loaded.vocab_hash.clone(),
                current: expected.to_string(),
            });
        }
    }
    Ok(())
}

fn model_from_loaded(path: &Path, loaded: &LoadedCheckpoint) -> Result<Box<dyn PatchModel>> {
    let mut model: Box<dyn PatchModel> = match loaded.kind {
        ModelKind::Transformer => {
            let config = serde_json::from_value(loaded.config.clone())
                .map_err(|e| format_err(path, format!("bad transformer config: {e}")))?;
            Box::new(TransformerModel::build_raw(
                config,
                loaded.specials,
                loaded.vocab_hash.clone(),
            )?)
        }
        ModelKind::Baseline => {
            let config = serde_json::from_value(loaded.config.clone())
                .map_err(|e| format_err(path, format!("bad baseline config: {e}")))?;
            Box::new(BaselineModel::build_raw(
                config,
                loaded.specials,
                loaded.vocab_hash.clone(),
            )?)
        }
    };
    fill_params(model.as_mut(), loaded)?;
    Ok(model)
}

/// Rebuild the model a checkpoint describes and load its weights.
///
/// `expected_vocab_hash` guards against decoding with the wrong
/// vocabulary; pass `None` to skip the check.
pub fn load_model(path: &Path, expected_vocab_hash: Option<&str>) -> Result<Box<dyn PatchModel>> {
    let loaded = load_checkpoint(path)?;
    check_vocab_hash(&loaded, expected_vocab_hash)?;
    model_from_loaded(path, &loaded)
}

/// Resume helper: model plus optimizer state and the step it stopped at.
/// Everything needed to continue a fine-tuning run.
pub struct ResumePoint {
    pub model: Box<dyn PatchModel>,
    pub adam_state: Option<(Vec<Array2<f64>>, Vec<Array2<f64>>, u64)>,
    pub progress: TrainProgress,
}

pub fn load_for_resume(path: &Path, expected_vocab_hash: Option<&str>) -> Result<ResumePoint> {
    let loaded = load_checkpoint(path)?;
    check_vocab_hash(&loaded, expected_vocab_hash)?;
    let model = model_from_loaded(path, &loaded)?;
    Ok(ResumePoint {
        model,
        adam_state: loaded.adam_state,
        progress: loaded.progress,
    })
}

/// Resolve a pretrained-encoder source: an existing path is used as-is, any
/// other id is looked up under the cache directory from
/// [`ENCODER_CACHE_ENV`]. No URL is ever built in.
pub fn resolve_encoder_source(source: &str) -> PathBuf {
    let direct = PathBuf::from(source);
    if direct.exists() {
        return direct;
    }
    let cache = std::env::var(ENCODER_CACHE_ENV).unwrap_or_else(|_| ".".to_string());
    Path::new(&cache).join(format!("{source}.ckpt"))
}

/// Initialize a transformer's encoder-side tensors (token embeddings and
/// `encoder.*`) from a converted checkpoint. The decoder stays randomly
/// initialized, which is the fine-tuning setup.
pub fn load_pretrained_encoder(model: &mut TransformerModel, source: &str) -> Result<()> {
    let path = resolve_encoder_source(source);
    if !path.exists() {
        return Err(NnError::CheckpointUnavailable {
            path: path.display().to_string(),
            retryable: true,
            message: format!(
                "encoder {source:?} not found; place a converted checkpoint there or set {ENCODER_CACHE_ENV}"
            ),
        });
    }
    let loaded = load_checkpoint(&path)?;
    let mut by_name: std::collections::HashMap<&str, &Array2<f64>> = loaded
        .tensors
        .iter()
        .map(|(n, v)| (n.as_str(), v))
        .collect();

    let mut copied = 0usize;
    for (name, value) in model.params_mut().iter_mut() {
        let is_encoder_side = name == "tok_emb" || name.starts_with("encoder.");
        if !is_encoder_side {
            continue;
        }
        let Some(source_value) = by_name.remove(name) else {
            continue;
        };
        if value.dim() != source_value.dim() {
            return Err(NnError::ShapeMismatch {
                name: name.to_string(),
                found: vec![source_value.nrows(), source_value.ncols()],
                expected: vec![value.nrows(), value.ncols()],
            });
        }
        value.assign(source_value);
        copied += 1;
    }
    if copied == 0 {
        return Err(NnError::Config(format!(
            "checkpoint {} holds no encoder-side tensors",
            path.display()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GeneratorSpecials, ModelConfig};

    fn toy() -> TransformerModel {
        let mut config = ModelConfig::toy(40);
        config.hidden_dim = 16;
        config.attention_heads = 2;
        config.encoder_layers = 1;
        config.decoder_layers = 1;
        config.max_source_len = 8;
        config.max_target_len = 8;
        config.init_seed = 9;
        TransformerModel::build_raw(config, GeneratorSpecials { bos: 0, eos: 2 }, "vh".into())
            .unwrap()
    }

    #[test]
    fn round_trip_reproduces_probe_outputs_bitwise() {
        let model = toy();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_model(&path, &model, None, &TrainProgress::default()).unwrap();
        let reloaded = load_model(&path, Some("vh")).unwrap();

        let source = vec![0u32, 5, 6, 2];
        let cache_a = model.encode_source(&source);
        let cache_b = reloaded.encode_source(&source);
        let lp_a = model.next_log_probs(&cache_a, &[0, 7]);
        let lp_b = reloaded.next_log_probs(&cache_b, &[0, 7]);
        assert_eq!(lp_a.len(), lp_b.len());
        for (a, b) in lp_a.iter().zip(&lp_b) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn truncated_file_fails_integrity_check() {
        let model = toy();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_model(&path, &model, None, &TrainProgress::default()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 100]).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(NnError::CheckpointFormat { .. })
        ));
    }

    #[test]
    fn corrupted_byte_fails_integrity_check() {
        let model = toy();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_model(&path, &model, None, &TrainProgress::default()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x80;
        std::fs::write(&path, bytes).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn vocab_hash_mismatch_is_fatal() {
        let model = toy();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_model(&path, &model, None, &TrainProgress::default()).unwrap();
        assert!(matches!(
            load_model(&path, Some("other-vocab")),
            Err(NnError::VocabHashMismatch { .. })
        ));
    }

    #[test]
    fn toy_encoder_into_paper_scale_config_is_dim_mismatch() {
        let toy_model = toy();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("encoder.ckpt");
        save_model(&path, &toy_model, None, &TrainProgress::default()).unwrap();

        let mut big_config = ModelConfig::paper_default(40);
        big_config.encoder_layers = 1;
        big_config.decoder_layers = 1;
        let mut big = TransformerModel::build_raw(
            big_config,
            GeneratorSpecials { bos: 0, eos: 2 },
            "vh".into(),
        )
        .unwrap();
        let err = load_pretrained_encoder(&mut big, path.to_str().unwrap());
        assert!(matches!(err, Err(NnError::ShapeMismatch { .. })));
    }

    #[test]
    fn missing_pretrained_encoder_is_retryable() {
        let mut model = toy();
        std::env::set_var(ENCODER_CACHE_ENV, "/nonexistent-cache");
        let err = load_pretrained_encoder(&mut model, "some-registry-id");
        match err {
            Err(NnError::CheckpointUnavailable { retryable, .. }) => assert!(retryable),
            other => panic!("expected CheckpointUnavailable, got {other:?}"),
        }
    }
}
