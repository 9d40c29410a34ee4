//! On-disk volume format: a JSON header plus a sibling raw payload of
//! little-endian f32 values in x-fastest order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BinaryVolume, CtVolume};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
    pub dtype: String,
    pub byte_order: String,
    pub background_fill_hu: f32,
    /// Payload path, relative to the header's directory.
    pub raw_file: String,
}

fn raw_sibling(header: &Path) -> (PathBuf, String) {
    let stem = header
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "volume".into());
    let name = format!("{stem}.raw");
    (header.with_file_name(&name), name)
}

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::MalformedHeader {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Writes `<stem>.json` (the given path) and `<stem>.raw` next to it.
pub fn save_volume(v: &CtVolume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (raw_path, raw_name) = raw_sibling(path);
    let header = VolumeHeader {
        dims: v.dims,
        spacing_mm: v.spacing,
        origin_mm: v.origin,
        dtype: "f32".into(),
        byte_order: "little".into(),
        background_fill_hu: v.background_fill,
        raw_file: raw_name,
    };
    let mut bytes = Vec::with_capacity(v.voxels.len() * 4);
    for x in &v.voxels {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(&raw_path, bytes).map_err(|e| Error::io(&raw_path, e))?;
    let text = serde_json::to_string_pretty(&header)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<CtVolume> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header: VolumeHeader =
        serde_json::from_str(&text).map_err(|e| malformed(path, e.to_string()))?;
    if header.dtype != "f32" {
        return Err(malformed(path, format!("unsupported dtype {:?}", header.dtype)));
    }
    if header.byte_order != "little" {
        return Err(malformed(path, format!("unsupported byte order {:?}", header.byte_order)));
    }
    let raw_path = path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&header.raw_file);
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let expected = header
        .dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| malformed(path, "dims overflow"))?;
    if bytes.len() != expected * 4 {
        return Err(Error::PayloadSize {
            path: raw_path,
            expected,
            found: bytes.len(),
        });
    }
    let voxels = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    CtVolume::new(
        header.dims,
        header.spacing_mm,
        header.origin_mm,
        voxels,
        header.background_fill_hu,
    )
}

/// Binary volumes use the same format with 0.0/1.0 payload values.
pub fn save_binary_volume(b: &BinaryVolume, path: impl AsRef<Path>) -> Result<()> {
    save_volume(&b.to_volume(), path)
}

pub fn load_binary_volume(path: impl AsRef<Path>) -> Result<BinaryVolume> {
    let path = path.as_ref();
    let v = load_volume(path)?;
    let voxels = v
        .voxels
        .iter()
        .map(|&x| match x {
            0.0 => Ok(0u8),
            1.0 => Ok(1u8),
            other => Err(Error::InvalidVolume(format!(
                "{}: binary volume contains value {other}",
                path.display()
            ))),
        })
        .collect::<Result<Vec<_>>>()?;
    BinaryVolume::new(v.dims, v.spacing, v.origin, voxels)
}
