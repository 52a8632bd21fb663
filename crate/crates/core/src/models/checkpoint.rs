//! Single-file checkpoints: magic, little-endian `u64` header length, JSON header, then
//! raw little-endian `f32` tensors in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, TrainConfig};
use super::motion::MotionModel;
use crate::error::{Error, Result};
use crate::nn::{Float, NamedTensor};

pub const MAGIC: &[u8; 8] = b"OBJTRK01";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorKind {
    Param,
    Buffer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub kind: TensorKind,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub seed: u64,
    pub steps: usize,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    pub tensors: Vec<TensorEntry>,
}

pub fn save<T: Float>(path: &Path, model: &MotionModel<T>, steps: usize, train: Option<&TrainConfig>) -> Result<()> {
    let entries = |v: &[NamedTensor<T>], kind: TensorKind| -> Vec<TensorEntry> {
        v.iter()
            .map(|t| TensorEntry {
                name: t.name.clone(),
                kind: kind.clone(),
                shape: t.tensor.shape.clone(),
            })
            .collect()
    };
    let mut tensors = entries(&model.store.params, TensorKind::Param);
    tensors.extend(entries(&model.store.buffers, TensorKind::Buffer));
    let header = CheckpointHeader {
        model: model.config.clone(),
        seed: model.seed,
        steps,
        train: train.cloned(),
        tensors,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut bytes = Vec::with_capacity(16 + json.len() + 4 * model.store.num_params());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for t in model.store.params.iter().chain(&model.store.buffers) {
        for v in &t.tensor.data {
            bytes.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
    }
    crate::io::write_bytes_atomic(path, &bytes)
}

pub fn load<T: Float>(path: &Path) -> Result<(MotionModel<T>, CheckpointHeader)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |r: &str| Error::invalid(path.display().to_string(), r);
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().map_err(|_| bad("truncated header"))?) as usize;
    let body = 16usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[16..body]).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut model = MotionModel::<T>::new(&header.model, header.seed)?;
    let mut offset = body;
    let (np, nb) = (model.store.params.len(), model.store.buffers.len());
    if header.tensors.len() != np + nb {
        return Err(bad("tensor table does not match the model architecture"));
    }
    for (i, entry) in header.tensors.iter().enumerate() {
        let target = if i < np {
            &mut model.store.params[i]
        } else {
            &mut model.store.buffers[i - np]
        };
        if target.name != entry.name || target.tensor.shape != entry.shape {
            return Err(bad(&format!("tensor {} does not match the model", entry.name)));
        }
        let n = target.tensor.len();
        let end = offset + 4 * n;
        if end > bytes.len() {
            return Err(bad("truncated tensor data"));
        }
        for (v, chunk) in target.tensor.data.iter_mut().zip(bytes[offset..end].chunks_exact(4)) {
            *v = T::of(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64);
        }
        offset = end;
    }
    if offset != bytes.len() {
        return Err(bad("trailing bytes after tensor data"));
    }
    Ok((model, header))
}
