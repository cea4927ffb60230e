//! Model checkpoints.
//!
//! Layout: the 8-byte magic, a little-endian `u32` format version, a
//! little-endian `u64` header length, the JSON header (model kind, config,
//! tensor directory with shapes and byte offsets, payload size) and finally
//! the tensors as little-endian `f32` values.

use std::path::Path;

use serde::{Deserialize, Serialize};
use triadrec_core::cae::{build_cae, CaeConfig, CaeModel};
use triadrec_core::recmodel::{build_recommender, RecConfig, RecModel};
use triadrec_core::{RngState, Tensor};

use crate::error::{self, HarnessError, Result};

pub const MAGIC: &[u8; 8] = b"TRIADCKP";
pub const FORMAT_VERSION: u32 = 1;
const PREAMBLE: usize = 8 + 4 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Cae,
    Recommender,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (this build reads {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("checkpoint holds a {found:?} model, expected {expected:?}")]
    WrongKind { expected: ModelKind, found: ModelKind },
    #[error("tensor '{name}' has shape {found:?} in the file but the model needs {expected:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("tensor directory does not match the model: {0}")]
    TensorSet(String),
    #[error("truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    kind: ModelKind,
    config: serde_json::Value,
    tensors: Vec<TensorEntry>,
    payload_bytes: u64,
}

fn encode(kind: ModelKind, config: serde_json::Value, tensors: &[(String, &Tensor<f32>)]) -> Vec<u8> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0u64;
    for (name, t) in tensors {
        entries.push(TensorEntry { name: name.clone(), shape: t.shape().to_vec(), offset });
        offset += 4 * t.len() as u64;
    }
    let header = Header { kind, config, tensors: entries, payload_bytes: offset };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(PREAMBLE + json.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Decoded<'a> {
    header: Header,
    payload: &'a [u8],
}

fn decode(bytes: &[u8]) -> Result<Decoded<'_>, CheckpointError> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < PREAMBLE {
        return Err(CheckpointError::Truncated { expected: PREAMBLE as u64, found: bytes.len() as u64 });
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion { found: version, expected: FORMAT_VERSION });
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let header_end = (PREAMBLE as u64).saturating_add(header_len);
    if header_end > bytes.len() as u64 {
        return Err(CheckpointError::Truncated { expected: header_end, found: bytes.len() as u64 });
    }
    let header_end = header_end as usize;
    let header: Header = serde_json::from_slice(&bytes[PREAMBLE..header_end])
        .map_err(|e| CheckpointError::CorruptHeader(e.to_string()))?;
    let total = (header_end as u64).saturating_add(header.payload_bytes);
    if total > bytes.len() as u64 {
        return Err(CheckpointError::Truncated { expected: total, found: bytes.len() as u64 });
    }
    if total < bytes.len() as u64 {
        return Err(CheckpointError::CorruptHeader(format!(
            "{} bytes after the declared payload",
            bytes.len() as u64 - total
        )));
    }
    Ok(Decoded { header, payload: &bytes[header_end..] })
}

/// Copies the stored tensors into `targets`, which must match the directory
/// name for name and shape for shape.
fn fill(decoded: &Decoded<'_>, targets: Vec<(String, &mut Tensor<f32>)>) -> Result<(), CheckpointError> {
    let entries = &decoded.header.tensors;
    if entries.len() != targets.len() {
        return Err(CheckpointError::TensorSet(format!(
            "file has {} tensors, model has {}",
            entries.len(),
            targets.len()
        )));
    }
    for (entry, (name, _)) in entries.iter().zip(&targets) {
        if &entry.name != name {
            return Err(CheckpointError::TensorSet(format!("expected '{name}', found '{}'", entry.name)));
        }
    }
    for (entry, (name, t)) in entries.iter().zip(&targets) {
        if entry.shape != t.shape() {
            return Err(CheckpointError::ShapeMismatch {
                name: name.clone(),
                expected: t.shape().to_vec(),
                found: entry.shape.clone(),
            });
        }
    }
    for (entry, (name, t)) in entries.iter().zip(targets) {
        let start = entry.offset as usize;
        let end = start + 4 * t.len();
        let raw = decoded
            .payload
            .get(start..end)
            .ok_or_else(|| CheckpointError::CorruptHeader(format!("tensor '{name}' lies outside the payload")))?;
        for (dst, chunk) in t.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        }
    }
    Ok(())
}

fn config_of<C: serde::de::DeserializeOwned>(decoded: &Decoded<'_>, kind: ModelKind) -> Result<C, CheckpointError> {
    if decoded.header.kind != kind {
        return Err(CheckpointError::WrongKind { expected: kind, found: decoded.header.kind });
    }
    serde_json::from_value(decoded.header.config.clone())
        .map_err(|e| CheckpointError::CorruptHeader(format!("config: {e}")))
}

pub fn cae_to_bytes(model: &CaeModel) -> Vec<u8> {
    let config = serde_json::to_value(&model.config).expect("config serializes");
    encode(ModelKind::Cae, config, &model.named_tensors())
}

pub fn cae_from_bytes(bytes: &[u8]) -> Result<CaeModel, CheckpointError> {
    let decoded = decode(bytes)?;
    let config: CaeConfig = config_of(&decoded, ModelKind::Cae)?;
    let mut model = build_cae(&config, &mut RngState::new(0))
        .map_err(|e| CheckpointError::CorruptHeader(format!("config: {e}")))?;
    fill(&decoded, model.named_tensors_mut())?;
    Ok(model)
}

pub fn recommender_to_bytes(model: &RecModel<f32>) -> Vec<u8> {
    let config = serde_json::to_value(&model.config).expect("config serializes");
    encode(ModelKind::Recommender, config, &model.named_tensors())
}

pub fn recommender_from_bytes(bytes: &[u8]) -> Result<RecModel<f32>, CheckpointError> {
    let decoded = decode(bytes)?;
    let config: RecConfig = config_of(&decoded, ModelKind::Recommender)?;
    let mut model = build_recommender(&config, &mut RngState::new(0))
        .map_err(|e| CheckpointError::CorruptHeader(format!("config: {e}")))?;
    fill(&decoded, model.named_tensors_mut())?;
    Ok(model)
}

fn tag(path: &Path) -> impl FnOnce(CheckpointError) -> HarnessError + '_ {
    move |source| HarnessError::Checkpoint { path: path.to_path_buf(), source }
}

pub fn save_cae(model: &CaeModel, path: &Path) -> Result<()> {
    error::write(path, &cae_to_bytes(model))
}

pub fn load_cae(path: &Path) -> Result<CaeModel> {
    cae_from_bytes(&error::read(path)?).map_err(tag(path))
}

pub fn save_recommender(model: &RecModel<f32>, path: &Path) -> Result<()> {
    error::write(path, &recommender_to_bytes(model))
}

pub fn load_recommender(path: &Path) -> Result<RecModel<f32>> {
    recommender_from_bytes(&error::read(path)?).map_err(tag(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_rec() -> RecModel<f32> {
        let config = RecConfig {
            n_users: 3,
            n_restaurants: 2,
            embed_dim: 4,
            image_feature_dim: 5,
            ..RecConfig::default()
        };
        build_recommender(&config, &mut RngState::new(3)).unwrap()
    }

    #[test]
    fn recommender_round_trip_is_byte_identical() {
        let bytes = recommender_to_bytes(&small_rec());
        let again = recommender_to_bytes(&recommender_from_bytes(&bytes).unwrap());
        assert_eq!(bytes, again);
    }

    #[test]
    fn distinct_load_errors() {
        let bytes = recommender_to_bytes(&small_rec());

        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert_eq!(recommender_from_bytes(&wrong_magic).unwrap_err(), CheckpointError::BadMagic);

        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(matches!(
            recommender_from_bytes(&v2),
            Err(CheckpointError::UnsupportedVersion { found: 2, expected: 1 })
        ));

        let mut garbled = bytes.clone();
        garbled[PREAMBLE] = b'[';
        assert!(matches!(recommender_from_bytes(&garbled), Err(CheckpointError::CorruptHeader(_))));

        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(recommender_from_bytes(cut), Err(CheckpointError::Truncated { .. })));
        assert!(matches!(recommender_from_bytes(&bytes[..30]), Err(CheckpointError::Truncated { .. })));

        assert!(matches!(cae_from_bytes(&bytes), Err(CheckpointError::WrongKind { .. })));
    }

    #[test]
    fn tampered_shape_is_a_shape_mismatch() {
        let bytes = recommender_to_bytes(&small_rec());
        let needle = b"\"shape\":[3,4]";
        let at = bytes.windows(needle.len()).position(|w| w == needle).expect("user table entry");
        let mut tampered = bytes.clone();
        // same length, so the header still parses
        tampered[at..at + needle.len()].copy_from_slice(b"\"shape\":[4,3]");
        match recommender_from_bytes(&tampered) {
            Err(CheckpointError::ShapeMismatch { name, expected, found }) => {
                assert_eq!(name, "user_embedding");
                assert_eq!(expected, vec![3, 4]);
                assert_eq!(found, vec![4, 3]);
            }
            other => panic!("expected a shape mismatch, got {other:?}"),
        }
    }
}
