//! Shared on-disk container: one text line `promode <kind> <header-bytes>`,
//! a TOML header of exactly that many bytes, then raw little-endian arrays.

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ContainerError {
    #[error("not a promode {expected} file")]
    BadMagic { expected: &'static str },
    #[error("malformed file: {0}")]
    Malformed(String),
    #[error("missing field: {0}")]
    MissingField(String),
    #[error("unsupported version {found} (this build reads up to {supported})")]
    UnsupportedVersion { found: i64, supported: u32 },
    #[error("checksum mismatch in {0}")]
    Checksum(String),
}

pub fn encode(kind: &str, header: &str, payload: &[u8]) -> Vec<u8> {
    let mut out = format!("promode {kind} {}\n", header.len()).into_bytes();
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(payload);
    out
}

pub fn decode<'a>(
    kind: &'static str,
    bytes: &'a [u8],
) -> Result<(&'a str, &'a [u8]), ContainerError> {
    let nl = bytes
        .iter()
        .take(128)
        .position(|&b| b == b'\n')
        .ok_or(ContainerError::BadMagic { expected: kind })?;
    let first = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| ContainerError::BadMagic { expected: kind })?;
    let mut parts = first.split(' ');
    if parts.next() != Some("promode") || parts.next() != Some(kind) {
        return Err(ContainerError::BadMagic { expected: kind });
    }
    let len: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ContainerError::Malformed("header length".into()))?;
    let start = nl + 1;
    if bytes.len() < start + len {
        return Err(ContainerError::Malformed("truncated header".into()));
    }
    let header = std::str::from_utf8(&bytes[start..start + len])
        .map_err(|_| ContainerError::Malformed("header is not UTF-8".into()))?;
    Ok((header, &bytes[start + len..]))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn f32_bytes(values: impl IntoIterator<Item = f32>) -> Vec<u8> {
    values.into_iter().flat_map(f32::to_le_bytes).collect()
}

pub fn u32_bytes(values: impl IntoIterator<Item = u32>) -> Vec<u8> {
    values.into_iter().flat_map(u32::to_le_bytes).collect()
}

pub fn read_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

pub fn read_u32(bytes: &[u8]) -> Vec<u32> {
    bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

/// Reads the integer `format_version` key of a parsed header and rejects
/// versions newer than `supported`.
pub fn check_version(table: &toml::Table, supported: u32) -> Result<(), ContainerError> {
    let v = table
        .get("format_version")
        .ok_or_else(|| ContainerError::MissingField("format_version".into()))?
        .as_integer()
        .ok_or_else(|| ContainerError::Malformed("format_version is not an integer".into()))?;
    if v < 1 || v > i64::from(supported) {
        return Err(ContainerError::UnsupportedVersion {
            found: v,
            supported,
        });
    }
    Ok(())
}
