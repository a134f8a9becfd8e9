//! Checkpoint files.
//!
//! ```text
//! promode checkpoint <N>\n
//! <N bytes of TOML header>
//! parameter values   f32 LE, parameters in manifest order
//! first moments      f32 LE, same order (only when optimizer_state)
//! second moments     f32 LE, same order (only when optimizer_state)
//! ```
//!
//! The header holds `format_version`, `iteration`, `optimizer_state`, the
//! `[model]` config, the `[energy]` preprocessing settings, free-form
//! `[metadata]` strings and one `[[params]]` entry (name, shape, sha256 of
//! the values, and moment checksums when present) per parameter.

use std::collections::BTreeMap;
use std::path::Path;

use promode_tensor::{ParamId, ParamStore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ModelConfig, ModelError, ProMode};
use crate::container::{self, ContainerError};
use crate::data::EnergyConfig;

pub const CHECKPOINT_VERSION: u32 = 1;
const KIND: &str = "checkpoint";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Format(#[from] ContainerError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("parameter layout mismatch: {0}")]
    Layout(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<u64>,
    sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    first_moment_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    second_moment_sha256: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    iteration: u64,
    optimizer_state: bool,
    model: ModelConfig,
    energy: EnergyConfig,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
    params: Vec<ParamEntry>,
}

/// A model snapshot plus the training position it was taken at.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: ProMode<f32>,
    pub iteration: u64,
    /// Whether Adam moments were saved (and so restored).
    pub optimizer_state: bool,
    pub metadata: BTreeMap<String, String>,
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let store = &ckpt.model.params;
    let mut values = Vec::new();
    let mut first = Vec::new();
    let mut second = Vec::new();
    let mut params = Vec::with_capacity(store.len());
    for p in store.iter() {
        let v = container::f32_bytes(p.value.data().iter().copied());
        let mut entry = ParamEntry {
            name: p.name.clone(),
            shape: p.value.shape().iter().map(|&d| d as u64).collect(),
            sha256: container::sha256_hex(&v),
            first_moment_sha256: None,
            second_moment_sha256: None,
        };
        values.extend_from_slice(&v);
        if ckpt.optimizer_state {
            let m = container::f32_bytes(p.first_moment.iter().copied());
            let s = container::f32_bytes(p.second_moment.iter().copied());
            entry.first_moment_sha256 = Some(container::sha256_hex(&m));
            entry.second_moment_sha256 = Some(container::sha256_hex(&s));
            first.extend_from_slice(&m);
            second.extend_from_slice(&s);
        }
        params.push(entry);
    }
    let header = Header {
        format_version: CHECKPOINT_VERSION,
        iteration: ckpt.iteration,
        optimizer_state: ckpt.optimizer_state,
        model: ckpt.model.config().clone(),
        energy: ckpt.model.energy,
        metadata: ckpt.metadata.clone(),
        params,
    };
    let text = toml::to_string(&header).expect("checkpoint header serializes");
    values.extend_from_slice(&first);
    values.extend_from_slice(&second);
    container::encode(KIND, &text, &values)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let (text, payload) = container::decode(KIND, bytes)?;
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| ContainerError::Malformed(e.to_string()))?;
    container::check_version(&table, CHECKPOINT_VERSION)?;
    for key in ["iteration", "optimizer_state", "model", "energy", "params"] {
        if !table.contains_key(key) {
            return Err(ContainerError::MissingField(key.into()).into());
        }
    }
    let header: Header =
        toml::from_str(text).map_err(|e| ContainerError::Malformed(e.to_string()))?;
    let mut model = ProMode::<f32>::new(&header.model, 0)?;
    model.energy = header.energy;
    let store = &mut model.params;
    if store.len() != header.params.len() {
        return Err(CheckpointError::Layout(format!(
            "file has {} parameters, config builds {}",
            header.params.len(),
            store.len()
        )));
    }
    let total: usize = store.total_values();
    let blocks = if header.optimizer_state { 3 } else { 1 };
    if payload.len() != total * 4 * blocks {
        return Err(ContainerError::Malformed(format!(
            "payload has {} bytes, expected {}",
            payload.len(),
            total * 4 * blocks
        ))
        .into());
    }
    let mut offset = 0usize;
    for (i, entry) in header.params.iter().enumerate() {
        let p = store.get_mut(ParamId(i));
        let shape: Vec<u64> = p.value.shape().iter().map(|&d| d as u64).collect();
        if p.name != entry.name || shape != entry.shape {
            return Err(CheckpointError::Layout(format!(
                "entry {i}: file has {} {:?}, config builds {} {:?}",
                entry.name, entry.shape, p.name, shape
            )));
        }
        let n = p.value.numel() * 4;
        let take =
            |block: usize, sha: Option<&String>, what: &str| -> Result<Vec<f32>, CheckpointError> {
                let start = block * total * 4 + offset;
                let bytes = &payload[start..start + n];
                let sha =
                    sha.ok_or_else(|| ContainerError::MissingField(format!("params.{what}")))?;
                if &container::sha256_hex(bytes) != sha {
                    return Err(ContainerError::Checksum(format!("{} {what}", entry.name)).into());
                }
                Ok(container::read_f32(bytes))
            };
        let values = take(0, Some(&entry.sha256), "sha256")?;
        p.value.data_mut().copy_from_slice(&values);
        if header.optimizer_state {
            p.first_moment = take(1, entry.first_moment_sha256.as_ref(), "first_moment_sha256")?;
            p.second_moment = take(
                2,
                entry.second_moment_sha256.as_ref(),
                "second_moment_sha256",
            )?;
        }
        offset += n;
    }
    Ok(Checkpoint {
        model,
        iteration: header.iteration,
        optimizer_state: header.optimizer_state,
        metadata: header.metadata,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    let bytes = encode_checkpoint(ckpt);
    // Write-then-rename so a crash never leaves a truncated checkpoint behind.
    let tmp = path.with_extension("tmp");
    let io = |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    };
    std::fs::write(&tmp, bytes).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_checkpoint(&bytes)
}

/// Parameter store of `ckpt` with moments cleared.
pub fn weights_only(store: &ParamStore<f32>) -> ParamStore<f32> {
    let mut out = store.clone();
    for p in out.iter_mut() {
        p.first_moment.iter_mut().for_each(|m| *m = 0.0);
        p.second_moment.iter_mut().for_each(|m| *m = 0.0);
    }
    out
}
