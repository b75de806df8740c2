//! Checkpoint directory: `manifest.json` plus `weights.bin`.
//!
//! `weights.bin` is the concatenation of every named tensor as little-endian
//! `f32`, in manifest order. Each manifest entry records the byte offset and
//! byte length of its tensor.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_model, ModelConfig, ModelInstance, ModelName};
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

const MANIFEST: &str = "manifest.json";
const WEIGHTS: &str = "weights.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub trainable: bool,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub length: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub model: String,
    pub seed: u64,
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(model: &ModelInstance, dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut payload = Vec::new();
    let mut tensors = Vec::new();
    for (name, trainable, tensor) in model.named_tensors() {
        let offset = payload.len() as u64;
        for v in tensor.values() {
            payload.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        tensors.push(TensorEntry {
            name,
            trainable,
            shape: tensor.shape().to_vec(),
            offset,
            length: payload.len() as u64 - offset,
        });
    }
    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        model: model.name().to_string(),
        seed: model.rng_seed,
        config: model.config.clone(),
        tensors,
    };
    let weights = dir.join(WEIGHTS);
    fs::write(&weights, &payload).map_err(|e| Error::io(&weights, e))?;
    let path = dir.join(MANIFEST);
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<ModelInstance> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST);
    let raw = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let value: serde_json::Value =
        serde_json::from_slice(&raw).map_err(|e| Error::CorruptCheckpoint(format!("manifest is not JSON: {e}")))?;
    let version = value.get("version").and_then(|v| v.as_u64());
    if version != Some(CHECKPOINT_VERSION as u64) {
        return Err(Error::Version(format!("manifest version {version:?}, expected {CHECKPOINT_VERSION}")));
    }
    let name = value.get("model").and_then(|v| v.as_str()).unwrap_or_default();
    if name.parse::<ModelName>().is_err() {
        return Err(Error::Version(format!("unknown model `{name}`")));
    }
    let manifest: Manifest =
        serde_json::from_value(value).map_err(|e| Error::CorruptCheckpoint(format!("manifest: {e}")))?;

    let weights = dir.join(WEIGHTS);
    let payload = fs::read(&weights).map_err(|e| Error::io(&weights, e))?;
    let declared: u64 = manifest.tensors.iter().map(|t| t.length).sum();
    if declared != payload.len() as u64 {
        return Err(Error::CorruptCheckpoint(format!(
            "manifest declares {declared} bytes, weights.bin has {}",
            payload.len()
        )));
    }

    let mut model = build_model(&manifest.config, manifest.seed)?;
    let expected = model.named_tensors().len();
    if expected != manifest.tensors.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "model has {expected} tensors, manifest lists {}",
            manifest.tensors.len()
        )));
    }
    for entry in &manifest.tensors {
        let elements: usize = entry.shape.iter().product();
        let end = entry.offset.checked_add(entry.length);
        if entry.length != 4 * elements as u64 || end.is_none_or(|e| e > payload.len() as u64) {
            return Err(Error::CorruptCheckpoint(format!("entry `{}` has inconsistent extent", entry.name)));
        }
        let target = model
            .tensor_mut(&entry.name)
            .ok_or_else(|| Error::CorruptCheckpoint(format!("unexpected tensor `{}`", entry.name)))?;
        if target.shape() != entry.shape.as_slice() {
            return Err(Error::CorruptCheckpoint(format!(
                "tensor `{}` has shape {:?}, model expects {:?}",
                entry.name,
                entry.shape,
                target.shape()
            )));
        }
        let bytes = &payload[entry.offset as usize..(entry.offset + entry.length) as usize];
        for (dst, chunk) in target.values_mut().iter_mut().zip(bytes.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk")) as f64;
        }
    }
    Ok(model)
}
