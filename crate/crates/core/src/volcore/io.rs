//! On-disk formats.
//!
//! A volume is a JSON header plus a raw file of little-endian `f32`
//! samples in x-fastest order:
//!
//! ```json
//! { "dims": [64, 64, 32], "spacing": [1.0, 1.0, 2.0],
//!   "dtype": "f32", "byte_order": "little", "data_file": "field.raw" }
//! ```
//!
//! `data_file` is resolved relative to the header. Transfer functions are
//! `{"n_t": N, "entries": [[r, g, b, a], ...]}`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ScalarVolume, TransferFunction};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    #[serde(default = "default_dtype")]
    pub dtype: String,
    #[serde(default = "default_byte_order")]
    pub byte_order: String,
    pub data_file: String,
}

fn default_dtype() -> String {
    "f32".into()
}

fn default_byte_order() -> String {
    "little".into()
}

impl VolumeHeader {
    pub fn for_volume(vol: &ScalarVolume, data_file: impl Into<String>) -> Self {
        Self {
            dims: vol.dims(),
            spacing: vol.spacing(),
            dtype: default_dtype(),
            byte_order: default_byte_order(),
            data_file: data_file.into(),
        }
    }

    fn check(&self) -> Result<()> {
        if self.dtype != "f32" {
            return Err(Error::InvalidVolume(format!("unsupported dtype {:?}", self.dtype)));
        }
        if self.byte_order != "little" {
            return Err(Error::InvalidVolume(format!("unsupported byte order {:?}", self.byte_order)));
        }
        Ok(())
    }
}

/// Decodes raw sample bytes described by `header`.
pub fn volume_from_bytes(header: &VolumeHeader, bytes: &[u8]) -> Result<ScalarVolume> {
    header.check()?;
    let n: usize = header.dims.iter().product();
    if bytes.len() != 4 * n {
        return Err(Error::LengthMismatch { expected: 4 * n, got: bytes.len() });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    ScalarVolume::new(header.dims, header.spacing, data)
}

pub fn volume_to_bytes(vol: &ScalarVolume) -> Vec<u8> {
    vol.data().iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

pub fn read_volume(header_path: impl AsRef<Path>) -> Result<ScalarVolume> {
    let header_path = header_path.as_ref();
    let text = fs::read_to_string(header_path).map_err(|e| Error::io(header_path, e))?;
    let header: VolumeHeader = serde_json::from_str(&text).map_err(|e| Error::json(header_path, e))?;
    let data_path = data_path(header_path, &header.data_file);
    let bytes = fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
    volume_from_bytes(&header, &bytes)
}

/// Writes `<stem>.raw` next to the header and returns the header written.
pub fn write_volume(header_path: impl AsRef<Path>, vol: &ScalarVolume) -> Result<VolumeHeader> {
    let header_path = header_path.as_ref();
    let stem = header_path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::InvalidConfig(format!("bad volume path {}", header_path.display())))?;
    let header = VolumeHeader::for_volume(vol, format!("{stem}.raw"));
    let data_path = data_path(header_path, &header.data_file);
    fs::write(&data_path, volume_to_bytes(vol)).map_err(|e| Error::io(&data_path, e))?;
    let text = serde_json::to_string_pretty(&header).map_err(|e| Error::json(header_path, e))?;
    fs::write(header_path, text + "\n").map_err(|e| Error::io(header_path, e))?;
    Ok(header)
}

fn data_path(header_path: &Path, data_file: &str) -> PathBuf {
    header_path.parent().unwrap_or(Path::new(".")).join(data_file)
}

/// Canonical serialized form of a transfer function. Every writer goes through
/// this so artifacts produced by different front ends compare byte-for-byte.
pub fn tf_to_json(tf: &TransferFunction) -> String {
    serde_json::to_string_pretty(tf).expect("transfer functions always serialize") + "\n"
}

pub fn tf_from_json(text: &str) -> std::result::Result<TransferFunction, serde_json::Error> {
    serde_json::from_str(text)
}

pub fn read_tf(path: impl AsRef<Path>) -> Result<TransferFunction> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    tf_from_json(&text).map_err(|e| Error::json(path, e))
}

pub fn write_tf(path: impl AsRef<Path>, tf: &TransferFunction) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, tf_to_json(tf)).map_err(|e| Error::io(path, e))
}
