//! Model checkpoints: `manifest.json` plus a little-endian `f32` blob file.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RiskError};

use super::model::{ModelConfig, RiskModel};
use super::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";
const FORMAT: &str = "riskmap-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob file.
    pub offset: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub config: ModelConfig,
    pub blob: String,
    pub tensors: Vec<TensorEntry>,
    /// Free-form metadata such as label statistics.
    #[serde(default)]
    pub extra: serde_json::Value,
}

pub fn save_checkpoint(model: &RiskModel, dir: &Path, extra: serde_json::Value) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| RiskError::io(dir, e))?;
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    for (name, t) in model.names().iter().zip(model.params()) {
        let offset = blob.len() as u64;
        for &v in t.data() {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
            bytes: blob.len() as u64 - offset,
        });
    }
    let manifest = CheckpointManifest {
        format: FORMAT.into(),
        config: model.config().clone(),
        blob: PARAMS_FILE.into(),
        tensors,
        extra,
    };
    let blob_path = dir.join(PARAMS_FILE);
    fs::write(&blob_path, blob).map_err(|e| RiskError::io(blob_path, e))?;
    let man_path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| RiskError::Format(e.to_string()))?;
    fs::write(&man_path, json).map_err(|e| RiskError::io(man_path, e))
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| RiskError::io(&path, e))?;
    let m: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| RiskError::Format(format!("{}: {e}", path.display())))?;
    if m.format != FORMAT {
        return Err(RiskError::Format(format!("unsupported checkpoint format {:?}", m.format)));
    }
    Ok(m)
}

pub fn load_checkpoint(dir: &Path) -> Result<(RiskModel, CheckpointManifest)> {
    let manifest = read_manifest(dir)?;
    let blob_path = dir.join(&manifest.blob);
    let blob = fs::read(&blob_path).map_err(|e| RiskError::io(&blob_path, e))?;
    let mut params = Vec::with_capacity(manifest.tensors.len());
    for e in &manifest.tensors {
        let n: usize = e.shape.iter().product();
        let (start, end) = (e.offset as usize, (e.offset + e.bytes) as usize);
        if e.bytes as usize != 4 * n || end > blob.len() {
            return Err(RiskError::Format(format!("tensor {} has inconsistent extent", e.name)));
        }
        let data = blob[start..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        params.push(Tensor::new(e.shape.clone(), data)?);
    }
    let model = RiskModel::from_params(manifest.config.clone(), params)?;
    Ok((model, manifest))
}
