//! Record files.
//!
//! ```text
//! promode record <N>\n
//! <N bytes of TOML header>
//! f0_hz            f32 LE × T
//! energy_raw       f32 LE × T
//! mel10            f32 LE × T·10 (row-major, frame by frame)
//! vuv              u8 × T
//! durations_frames u32 LE × P
//! speaker_vec      f32 LE × D
//! phoneme_ids      u32 LE × P
//! ```
//!
//! The header carries `format_version`, id/speaker/split strings, the counts
//! `frames`, `phonemes`, `mel_bands`, `speaker_dim`, `frame_hop_ms`, and one
//! `[[arrays]]` entry per array (name, dtype, count, sha256) in payload order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::{self, ContainerError};
use crate::data::record::{UtteranceRecord, Violation, MEL_BANDS};

pub const RECORD_VERSION: u32 = 1;
const KIND: &str = "record";

#[derive(Debug, Error)]
pub enum RecordError {
    #[error(transparent)]
    Format(#[from] ContainerError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("record violates invariants: {}", list(.0))]
    Invalid(Vec<Violation>),
}

fn list(v: &[Violation]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

impl RecordError {
    /// Stable numeric code per failure class.
    pub fn code(&self) -> u32 {
        match self {
            RecordError::Format(ContainerError::MissingField(_)) => 10,
            RecordError::Format(ContainerError::UnsupportedVersion { .. }) => 11,
            RecordError::Format(ContainerError::Checksum(_)) => 12,
            RecordError::Format(ContainerError::BadMagic { .. }) => 13,
            RecordError::Format(ContainerError::Malformed(_)) => 14,
            RecordError::Io { .. } => 20,
            RecordError::Invalid(_) => 30,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    dtype: String,
    count: u64,
    sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    id: String,
    speaker_id: String,
    split: String,
    frames: u64,
    phonemes: u64,
    mel_bands: u64,
    speaker_dim: u64,
    frame_hop_ms: f64,
    arrays: Vec<ArrayEntry>,
}

const ARRAYS: [(&str, &str, usize); 7] = [
    ("f0_hz", "f32le", 4),
    ("energy_raw", "f32le", 4),
    ("mel10", "f32le", 4),
    ("vuv", "u8", 1),
    ("durations_frames", "u32le", 4),
    ("speaker_vec", "f32le", 4),
    ("phoneme_ids", "u32le", 4),
];

const REQUIRED_KEYS: [&str; 10] = [
    "format_version",
    "id",
    "speaker_id",
    "split",
    "frames",
    "phonemes",
    "mel_bands",
    "speaker_dim",
    "frame_hop_ms",
    "arrays",
];

pub fn encode_record(record: &UtteranceRecord) -> Result<Vec<u8>, RecordError> {
    let violations = record.validate();
    if !violations.is_empty() {
        return Err(RecordError::Invalid(violations));
    }
    let blobs: [Vec<u8>; 7] = [
        container::f32_bytes(record.f0_hz.iter().copied()),
        container::f32_bytes(record.energy_raw.iter().copied()),
        container::f32_bytes(record.mel10.iter().flatten().copied()),
        record.vuv.clone(),
        container::u32_bytes(record.durations_frames.iter().copied()),
        container::f32_bytes(record.speaker_vec.iter().copied()),
        container::u32_bytes(record.phoneme_ids.iter().copied()),
    ];
    let arrays = ARRAYS
        .iter()
        .zip(&blobs)
        .map(|(&(name, dtype, width), blob)| ArrayEntry {
            name: name.into(),
            dtype: dtype.into(),
            count: (blob.len() / width) as u64,
            sha256: container::sha256_hex(blob),
        })
        .collect();
    let header = Header {
        format_version: RECORD_VERSION,
        id: record.id.clone(),
        speaker_id: record.speaker_id.clone(),
        split: record.split.clone(),
        frames: record.frames() as u64,
        phonemes: record.phonemes() as u64,
        mel_bands: MEL_BANDS as u64,
        speaker_dim: record.speaker_vec.len() as u64,
        frame_hop_ms: record.frame_hop_ms,
        arrays,
    };
    let text = toml::to_string(&header).map_err(|e| ContainerError::Malformed(e.to_string()))?;
    Ok(container::encode(KIND, &text, &blobs.concat()))
}

pub fn decode_record(bytes: &[u8]) -> Result<UtteranceRecord, RecordError> {
    let (text, payload) = container::decode(KIND, bytes)?;
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| ContainerError::Malformed(e.to_string()))?;
    container::check_version(&table, RECORD_VERSION)?;
    for key in REQUIRED_KEYS {
        if !table.contains_key(key) {
            return Err(ContainerError::MissingField(key.into()).into());
        }
    }
    let header: Header =
        toml::from_str(text).map_err(|e| ContainerError::Malformed(e.to_string()))?;
    for &(name, _, _) in &ARRAYS {
        if !header.arrays.iter().any(|a| a.name == name) {
            return Err(ContainerError::MissingField(name.into()).into());
        }
    }
    if header.arrays.len() != ARRAYS.len() {
        return Err(ContainerError::Malformed("unexpected array list".into()).into());
    }
    if header.mel_bands != MEL_BANDS as u64 {
        return Err(ContainerError::Malformed(format!("mel_bands = {}", header.mel_bands)).into());
    }
    let mut offset = 0usize;
    let mut blobs: Vec<&[u8]> = Vec::with_capacity(ARRAYS.len());
    for (entry, &(name, dtype, width)) in header.arrays.iter().zip(&ARRAYS) {
        if entry.name != name || entry.dtype != dtype {
            return Err(ContainerError::Malformed(format!(
                "array {} ({}) out of order",
                entry.name, entry.dtype
            ))
            .into());
        }
        let len = entry.count as usize * width;
        let blob = payload
            .get(offset..offset + len)
            .ok_or_else(|| ContainerError::Malformed(format!("payload truncated in {name}")))?;
        if container::sha256_hex(blob) != entry.sha256 {
            return Err(ContainerError::Checksum(name.into()).into());
        }
        blobs.push(blob);
        offset += len;
    }
    if offset != payload.len() {
        return Err(ContainerError::Malformed("trailing bytes after payload".into()).into());
    }
    let mel_flat = container::read_f32(blobs[2]);
    let record = UtteranceRecord {
        id: header.id,
        speaker_id: header.speaker_id,
        split: header.split,
        f0_hz: container::read_f32(blobs[0]),
        energy_raw: container::read_f32(blobs[1]),
        mel10: mel_flat
            .chunks_exact(MEL_BANDS)
            .map(|c| {
                let mut a = [0.0f32; MEL_BANDS];
                a.copy_from_slice(c);
                a
            })
            .collect(),
        vuv: blobs[3].to_vec(),
        durations_frames: container::read_u32(blobs[4]),
        speaker_vec: container::read_f32(blobs[5]),
        phoneme_ids: container::read_u32(blobs[6]),
        frame_hop_ms: header.frame_hop_ms,
    };
    if record.frames() as u64 != header.frames
        || record.phonemes() as u64 != header.phonemes
        || record.speaker_vec.len() as u64 != header.speaker_dim
    {
        return Err(
            ContainerError::Malformed("declared counts disagree with arrays".into()).into(),
        );
    }
    let violations = record.validate();
    if !violations.is_empty() {
        return Err(RecordError::Invalid(violations));
    }
    Ok(record)
}

pub fn write_record(record: &UtteranceRecord, path: &Path) -> Result<(), RecordError> {
    let bytes = encode_record(record)?;
    std::fs::write(path, bytes).map_err(|source| RecordError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_record(path: &Path) -> Result<UtteranceRecord, RecordError> {
    let bytes = std::fs::read(path).map_err(|source| RecordError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_record(&bytes)
}
