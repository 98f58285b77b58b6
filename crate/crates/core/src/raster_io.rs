//! Raw raster persistence with JSON sidecars.
//!
//! A raster `stem` is written as two files:
//!
//! * `stem.raw`: voxel values with no header. Intensity volumes are
//!   little-endian IEEE-754 `f32`, masks are one `u8` per voxel (0 or 1).
//!   Values are ordered channel-major, then z, then y, then x (x fastest).
//! * `stem.json`: a [`Sidecar`] describing dims, spacing, channel count,
//!   dtype (`"f32le"` or `"u8"`) and the generating seed.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{voxel_count, Dims, Spacing, Volume3, Volume4};

pub const DTYPE_F32: &str = "f32le";
pub const DTYPE_U8: &str = "u8";
pub const LAYOUT: &str = "channel,z,y,x (x fastest)";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub dims: Dims,
    pub spacing: Spacing,
    pub channels: usize,
    pub dtype: String,
    pub seed: u64,
    pub layout: String,
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("raw"), stem.with_extension("json"))
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<S: for<'de> Deserialize<'de>>(path: &Path) -> Result<S> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub fn write_volume(stem: &Path, vol: &Volume4, seed: u64) -> Result<()> {
    let (raw, json) = paths(stem);
    let mut bytes = Vec::with_capacity(vol.data().len() * 4);
    for v in vol.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&raw, bytes).map_err(|e| Error::io(&raw, e))?;
    write_json(
        &json,
        &Sidecar {
            dims: vol.dims(),
            spacing: vol.spacing(),
            channels: vol.channels(),
            dtype: DTYPE_F32.into(),
            seed,
            layout: LAYOUT.into(),
        },
    )
}

pub fn read_volume(stem: &Path) -> Result<(Volume4, Sidecar)> {
    let (raw, json) = paths(stem);
    let meta: Sidecar = read_json(&json)?;
    if meta.dtype != DTYPE_F32 {
        return Err(Error::Config(format!(
            "{}: expected dtype {DTYPE_F32}, found {}",
            json.display(),
            meta.dtype
        )));
    }
    let bytes = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
    let expected = meta.channels * voxel_count(meta.dims) * 4;
    if bytes.len() != expected {
        return Err(Error::Shape(format!(
            "{}: {} bytes, sidecar implies {expected}",
            raw.display(),
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let vol = Volume4::from_vec(meta.channels, meta.dims, meta.spacing, data)?;
    Ok((vol, meta))
}

pub fn write_mask(stem: &Path, mask: &Volume3<u8>, seed: u64) -> Result<()> {
    let (raw, json) = paths(stem);
    fs::write(&raw, mask.data()).map_err(|e| Error::io(&raw, e))?;
    write_json(
        &json,
        &Sidecar {
            dims: mask.dims(),
            spacing: mask.spacing(),
            channels: 1,
            dtype: DTYPE_U8.into(),
            seed,
            layout: LAYOUT.into(),
        },
    )
}

pub fn read_mask(stem: &Path) -> Result<(Volume3<u8>, Sidecar)> {
    let (raw, json) = paths(stem);
    let meta: Sidecar = read_json(&json)?;
    if meta.dtype != DTYPE_U8 {
        return Err(Error::Config(format!(
            "{}: expected dtype {DTYPE_U8}, found {}",
            json.display(),
            meta.dtype
        )));
    }
    let bytes = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
    let mask = Volume3::from_vec(meta.dims, meta.spacing, bytes)?;
    Ok((mask, meta))
}
