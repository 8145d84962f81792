//! Checkpoint file: one line of compact JSON (the manifest) terminated by `\n`,
//! followed by the raw little-endian `f64` payload. Entry offsets are byte
//! offsets into the payload and must be contiguous in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FocalUNet, ModelConfig};
use crate::tensor::Tensor;
use crate::train::OptimizerState;

pub const FORMAT: &str = "focal-unet-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub model_config: ModelConfig,
    /// Completed optimizer steps.
    pub step: u64,
    pub entries: Vec<CheckpointEntry>,
}

fn entry_names(name: &str) -> [String; 3] {
    [format!("param/{name}"), format!("adam.m/{name}"), format!("adam.v/{name}")]
}

pub fn encode_checkpoint(model: &FocalUNet, state: &OptimizerState) -> Result<Vec<u8>> {
    let mut entries = Vec::new();
    let mut payload = Vec::new();
    for (i, e) in model.params.entries().iter().enumerate() {
        let tensors = [&e.tensor, &state.m[i], &state.v[i]];
        for (name, t) in entry_names(&e.name).into_iter().zip(tensors) {
            entries.push(CheckpointEntry {
                name,
                shape: t.shape().to_vec(),
                offset: payload.len(),
            });
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let manifest = CheckpointManifest {
        format: FORMAT.into(),
        version: VERSION,
        model_config: model.config.clone(),
        step: state.t,
        entries,
    };
    let mut bytes = serde_json::to_vec(&manifest)?;
    bytes.push(b'\n');
    bytes.extend_from_slice(&payload);
    Ok(bytes)
}

pub fn save_checkpoint(path: &Path, model: &FocalUNet, state: &OptimizerState) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, encode_checkpoint(model, state)?)?;
    Ok(())
}

/// Splits and validates the manifest; entry ranges are checked against the payload.
pub fn parse_checkpoint(bytes: &[u8]) -> Result<(CheckpointManifest, &[u8])> {
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::CorruptManifest("no manifest terminator".into()))?;
    let manifest: CheckpointManifest =
        serde_json::from_slice(&bytes[..split]).map_err(|e| Error::CorruptManifest(e.to_string()))?;
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(Error::CorruptManifest(format!(
            "unsupported format {} v{}",
            manifest.format, manifest.version
        )));
    }
    let payload = &bytes[split + 1..];
    let mut expected = 0usize;
    for e in &manifest.entries {
        if e.offset != expected {
            return Err(Error::CorruptManifest(format!(
                "entry `{}` at offset {} but previous entries end at {expected}",
                e.name, e.offset
            )));
        }
        expected += e.shape.iter().product::<usize>() * 8;
        if expected > payload.len() {
            return Err(Error::TruncatedCheckpoint {
                entry: e.name.clone(),
                needed: expected,
                available: payload.len(),
            });
        }
    }
    if expected != payload.len() {
        return Err(Error::CorruptManifest(format!(
            "payload has {} bytes, manifest describes {expected}",
            payload.len()
        )));
    }
    Ok((manifest, payload))
}

fn read_entry(manifest: &CheckpointManifest, payload: &[u8], name: &str, shape: &[usize]) -> Result<Tensor> {
    let entry = manifest
        .entries
        .iter()
        .find(|e| e.name == name)
        .ok_or_else(|| Error::MissingEntry(name.to_string()))?;
    if entry.shape != shape {
        return Err(Error::CheckpointShape {
            entry: name.to_string(),
            expected: shape.to_vec(),
            found: entry.shape.clone(),
        });
    }
    let numel: usize = shape.iter().product();
    let data = payload[entry.offset..entry.offset + numel * 8]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Tensor::new(shape, data)
}

/// Restores parameters and optimizer moments into an existing model whose
/// configuration decides the expected shapes.
pub fn load_into(path: &Path, model: &mut FocalUNet, state: &mut OptimizerState) -> Result<()> {
    restore(&fs::read(path)?, model, state)
}

fn restore(bytes: &[u8], model: &mut FocalUNet, state: &mut OptimizerState) -> Result<()> {
    let (manifest, payload) = parse_checkpoint(bytes)?;
    let mut params = Vec::with_capacity(model.params.len());
    let mut m = Vec::with_capacity(model.params.len());
    let mut v = Vec::with_capacity(model.params.len());
    for e in model.params.entries() {
        let [pn, mn, vn] = entry_names(&e.name);
        let shape = e.tensor.shape();
        params.push(read_entry(&manifest, payload, &pn, shape)?);
        m.push(read_entry(&manifest, payload, &mn, shape)?);
        v.push(read_entry(&manifest, payload, &vn, shape)?);
    }
    for (i, t) in params.into_iter().enumerate() {
        *model.params.tensor_mut(i) = t;
    }
    *state = OptimizerState { m, v, t: manifest.step };
    Ok(())
}

/// Rebuilds the model from the stored configuration, then restores every tensor.
pub fn load_checkpoint(path: &Path) -> Result<(FocalUNet, OptimizerState)> {
    let bytes = fs::read(path)?;
    let (manifest, _) = parse_checkpoint(&bytes)?;
    let mut model = FocalUNet::build(manifest.model_config.clone(), 0)?;
    let mut state = OptimizerState::new(&model.params);
    restore(&bytes, &mut model, &mut state)?;
    Ok((model, state))
}
