//! Shared on-disk conventions: a UTF-8 TOML manifest paired with a flat
//! little-endian float binary stored next to it.
//!
//! The manifest names its companion binary (relative to the manifest's
//! directory), its element type (`f32le` or `f64le`), the element count and a
//! `sha256:<hex>` checksum of the binary bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Dtype {
    #[serde(rename = "f32le")]
    F32Le,
    #[serde(rename = "f64le")]
    F64Le,
}

impl Dtype {
    pub fn width(self) -> usize {
        match self {
            Dtype::F32Le => 4,
            Dtype::F64Le => 8,
        }
    }
}

pub fn checksum(bytes: &[u8]) -> String {
    format!("sha256:{}", hex::encode(Sha256::digest(bytes)))
}

/// `foo/bar.toml` -> `foo/bar.bin`.
pub fn companion_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

pub fn encode(values: &[f64], dtype: Dtype) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * dtype.width());
    for &v in values {
        match dtype {
            Dtype::F32Le => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::F64Le => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out
}

pub fn decode(bytes: &[u8], dtype: Dtype) -> Vec<f64> {
    match dtype {
        Dtype::F32Le => bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F64Le => bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect(),
    }
}

/// Rounds through `f32`, so values survive an `f32le` round trip bit-exactly.
pub fn to_f32_precision(v: f64) -> f64 {
    v as f32 as f64
}

pub fn write_manifest<M: Serialize>(path: &Path, manifest: &M) -> Result<()> {
    let text = toml::to_string_pretty(manifest)
        .map_err(|e| Error::format("manifest", e.to_string()))?;
    write_bytes(path, text.as_bytes())
}

pub fn read_manifest<M: DeserializeOwned>(path: &Path) -> Result<M> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| {
        let message = e.message().to_string();
        // toml reports missing/unknown keys in the message; surface the key as the field.
        let field = message
            .split('`')
            .nth(1)
            .map(str::to_string)
            .unwrap_or_else(|| "manifest".to_string());
        Error::format(field, message)
    })
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads exactly `count` values, checking length and checksum.
pub fn read_values(path: &Path, dtype: Dtype, count: usize, expected_checksum: &str) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = (count * dtype.width()) as u64;
    if (bytes.len() as u64) < expected {
        return Err(Error::TruncatedBinary {
            path: path.to_path_buf(),
            offset: bytes.len() as u64,
            expected,
        });
    }
    if bytes.len() as u64 > expected {
        return Err(Error::format(
            "values",
            format!("binary has {} bytes, manifest implies {expected}", bytes.len()),
        ));
    }
    let actual = checksum(&bytes);
    if actual != expected_checksum {
        return Err(Error::format(
            "checksum",
            format!("expected {expected_checksum}, binary hashes to {actual}"),
        ));
    }
    Ok(decode(&bytes, dtype))
}

/// Resolves the binary named in a manifest relative to the manifest's directory.
pub fn resolve_binary(manifest: &Path, binary: &str) -> PathBuf {
    manifest
        .parent()
        .map(|p| p.join(binary))
        .unwrap_or_else(|| PathBuf::from(binary))
}

pub fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}
