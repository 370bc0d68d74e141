//! `HSC1` raster container.
//!
//! ```text
//! 0..4      magic "HSC1"
//! 4..8      header length L, u32 little-endian
//! 8..8+L    UTF-8 JSON {"height":H,"width":W,"bands":C,"dtype":"f32","layout":"bip"}
//! 8+L..     H*W*C little-endian samples, pixel-major, band-innermost
//! ```
//!
//! Masks use `"dtype":"u8"`, region rasters `"dtype":"u32"`, score maps
//! `"dtype":"f32"`; all three carry `"bands":1`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GroundTruthMask, HsiCube, HsiError};

pub const MAGIC: &[u8; 4] = b"HSC1";

/// JSON header. Field order matters: serialization must reproduce the
/// canonical key order byte for byte.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContainerHeader {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub dtype: String,
    pub layout: String,
}

impl ContainerHeader {
    fn new(height: usize, width: usize, bands: usize, dtype: &str) -> Self {
        Self {
            height,
            width,
            bands,
            dtype: dtype.to_string(),
            layout: "bip".to_string(),
        }
    }

    fn sample_size(&self) -> Option<u64> {
        match self.dtype.as_str() {
            "f32" | "u32" => Some(4),
            "u8" => Some(1),
            _ => None,
        }
    }
}

fn write_container(path: &Path, header: &ContainerHeader, payload: &[u8]) -> Result<(), HsiError> {
    let io_err = |source| HsiError::IoFailure {
        path: path.to_path_buf(),
        source,
    };
    let json = serde_json::to_vec(header).expect("header serializes");
    let mut bytes = Vec::with_capacity(8 + json.len() + payload.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&json);
    bytes.extend_from_slice(payload);
    let mut file = fs::File::create(path).map_err(io_err)?;
    file.write_all(&bytes).map_err(io_err)?;
    file.flush().map_err(io_err)
}

fn read_container(path: &Path, dtype: &str) -> Result<(ContainerHeader, Vec<u8>), HsiError> {
    if !path.exists() {
        return Err(HsiError::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|source| HsiError::IoFailure {
        path: path.to_path_buf(),
        source,
    })?;
    let corrupt = |reason: String| HsiError::CorruptHeader {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 8 || &bytes[0..4] != MAGIC {
        return Err(corrupt("missing HSC1 magic".into()));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let payload_start = 8usize
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| corrupt(format!("header length {header_len} exceeds file size")))?;
    let header: ContainerHeader = serde_json::from_slice(&bytes[8..payload_start])
        .map_err(|e| corrupt(format!("header json: {e}")))?;
    if header.layout != "bip" {
        return Err(corrupt(format!("unsupported layout {:?}", header.layout)));
    }
    if header.dtype != dtype {
        return Err(corrupt(format!("expected dtype {dtype}, found {:?}", header.dtype)));
    }
    if header.height == 0 || header.width == 0 || header.bands == 0 {
        return Err(corrupt("zero extent".into()));
    }
    let sample = header
        .sample_size()
        .ok_or_else(|| corrupt(format!("unknown dtype {:?}", header.dtype)))?;
    let expected = (header.height as u64)
        .checked_mul(header.width as u64)
        .and_then(|n| n.checked_mul(header.bands as u64))
        .and_then(|n| n.checked_mul(sample))
        .ok_or_else(|| corrupt("dimensions overflow".into()))?;
    let found = (bytes.len() - payload_start) as u64;
    if found != expected {
        return Err(HsiError::SizeMismatch {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    let payload = bytes[payload_start..].to_vec();
    Ok((header, payload))
}

fn f32_payload(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn f32_values(payload: &[u8]) -> Vec<f32> {
    payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect()
}

pub fn save_cube(cube: &HsiCube, path: impl AsRef<Path>) -> Result<(), HsiError> {
    let header = ContainerHeader::new(cube.height(), cube.width(), cube.bands(), "f32");
    write_container(path.as_ref(), &header, &f32_payload(cube.values()))
}

/// Loads a cube exactly as stored; no normalization is applied.
pub fn load_cube(path: impl AsRef<Path>) -> Result<HsiCube, HsiError> {
    let (h, payload) = read_container(path.as_ref(), "f32")?;
    HsiCube::new(h.height, h.width, h.bands, f32_values(&payload))
}

pub fn save_mask(mask: &GroundTruthMask, path: impl AsRef<Path>) -> Result<(), HsiError> {
    let header = ContainerHeader::new(mask.height(), mask.width(), 1, "u8");
    write_container(path.as_ref(), &header, mask.labels())
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<GroundTruthMask, HsiError> {
    let path = path.as_ref();
    let (h, payload) = read_container(path, "u8")?;
    if h.bands != 1 {
        return Err(HsiError::CorruptHeader {
            path: path.to_path_buf(),
            reason: format!("mask must have 1 band, found {}", h.bands),
        });
    }
    GroundTruthMask::new(h.height, h.width, payload)
}

/// Writes an `H x W` single-band `f32` score raster.
pub fn save_score_map(
    height: usize,
    width: usize,
    scores: &[f32],
    path: impl AsRef<Path>,
) -> Result<(), HsiError> {
    if scores.len() != height * width {
        return Err(HsiError::InvalidDimensions(format!(
            "score map {height}x{width} needs {} values, got {}",
            height * width,
            scores.len()
        )));
    }
    let header = ContainerHeader::new(height, width, 1, "f32");
    write_container(path.as_ref(), &header, &f32_payload(scores))
}

/// Reads a single-band `f32` raster as `(height, width, scores)`.
pub fn load_score_map(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<f32>), HsiError> {
    let path = path.as_ref();
    let (h, payload) = read_container(path, "f32")?;
    if h.bands != 1 {
        return Err(HsiError::CorruptHeader {
            path: path.to_path_buf(),
            reason: format!("score map must have 1 band, found {}", h.bands),
        });
    }
    Ok((h.height, h.width, f32_values(&payload)))
}

pub fn save_region_raster(
    height: usize,
    width: usize,
    labels: &[u32],
    path: impl AsRef<Path>,
) -> Result<(), HsiError> {
    if labels.len() != height * width {
        return Err(HsiError::InvalidDimensions(format!(
            "region raster {height}x{width} needs {} labels, got {}",
            height * width,
            labels.len()
        )));
    }
    let header = ContainerHeader::new(height, width, 1, "u32");
    let payload: Vec<u8> = labels.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_container(path.as_ref(), &header, &payload)
}

pub fn load_region_raster(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u32>), HsiError> {
    let path = path.as_ref();
    let (h, payload) = read_container(path, "u32")?;
    if h.bands != 1 {
        return Err(HsiError::CorruptHeader {
            path: path.to_path_buf(),
            reason: format!("region raster must have 1 band, found {}", h.bands),
        });
    }
    let labels = payload
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok((h.height, h.width, labels))
}
