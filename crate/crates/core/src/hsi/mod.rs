//! Hyperspectral cube representation.
//!
//! Cubes are stored band-interleaved-by-pixel: the value of band `c` at pixel
//! `(row, col)` lives at `(row * width + col) * bands + c`. Values are `f32` on
//! disk and in memory; compute stages widen to `f64` as needed.

mod container;
mod synth;

pub use container::{
    load_cube, load_mask, load_region_raster, load_score_map, save_cube, save_mask,
    save_region_raster, save_score_map, ContainerHeader, MAGIC,
};
pub use synth::{synth_scene, synth_scene_parts, AnomalyBlob, SceneParts, SceneSpec};

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HsiError {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("corrupt header in {path}: {reason}")]
    CorruptHeader { path: PathBuf, reason: String },
    #[error("payload size mismatch in {path}: expected {expected} bytes, found {found}")]
    SizeMismatch {
        path: PathBuf,
        expected: u64,
        found: u64,
    },
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("could not place anomaly blob {blob} without overlap after {attempts} attempts")]
    PlacementFailure { blob: usize, attempts: usize },
}

/// An `H x W x C` reflectance raster.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    height: usize,
    width: usize,
    bands: usize,
    values: Vec<f32>,
}

impl HsiCube {
    pub fn new(height: usize, width: usize, bands: usize, values: Vec<f32>) -> Result<Self, HsiError> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(HsiError::InvalidDimensions(format!(
                "{height}x{width}x{bands} has a zero extent"
            )));
        }
        let expected = height * width * bands;
        if values.len() != expected {
            return Err(HsiError::InvalidDimensions(format!(
                "{height}x{width}x{bands} needs {expected} values, got {}",
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            bands,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize, bands: usize) -> Result<Self, HsiError> {
        Self::new(height, width, bands, vec![0.0; height * width * bands])
    }

    /// Builds a cube by evaluating `f(row, col, band)` for every entry.
    pub fn from_fn(
        height: usize,
        width: usize,
        bands: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self, HsiError> {
        let mut values = Vec::with_capacity(height * width * bands);
        for r in 0..height {
            for c in 0..width {
                for b in 0..bands {
                    values.push(f(r, c, b));
                }
            }
        }
        Self::new(height, width, bands, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    /// Spectrum of the pixel at flat (row-major) index `p`.
    pub fn pixel(&self, p: usize) -> &[f32] {
        &self.values[p * self.bands..(p + 1) * self.bands]
    }

    pub fn get(&self, row: usize, col: usize, band: usize) -> f32 {
        self.values[(row * self.width + col) * self.bands + band]
    }

    /// Pixels as an `(H*W) x C` row-major `f64` matrix.
    pub fn to_pixel_matrix(&self) -> ndarray::Array2<f64> {
        ndarray::Array2::from_shape_fn((self.n_pixels(), self.bands), |(p, b)| {
            self.values[p * self.bands + b] as f64
        })
    }

    /// `(min, max)` over every stored value.
    pub fn value_range(&self) -> (f32, f32) {
        self.values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Per-band min-max scaling to `[0, 1]`; zero-range bands map to 0.
pub fn normalize(cube: &HsiCube) -> HsiCube {
    let bands = cube.bands;
    let mut lo = vec![f64::INFINITY; bands];
    let mut hi = vec![f64::NEG_INFINITY; bands];
    for px in cube.values.chunks_exact(bands) {
        for (b, &v) in px.iter().enumerate() {
            lo[b] = lo[b].min(v as f64);
            hi[b] = hi[b].max(v as f64);
        }
    }
    let values = cube
        .values
        .chunks_exact(bands)
        .flat_map(|px| {
            px.iter().enumerate().map(|(b, &v)| {
                let range = hi[b] - lo[b];
                if range > 0.0 {
                    ((v as f64 - lo[b]) / range) as f32
                } else {
                    0.0
                }
            })
        })
        .collect();
    HsiCube { values, ..*cube }
}

/// Binary anomaly labels (1 = anomaly) over an `H x W` raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruthMask {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl GroundTruthMask {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self, HsiError> {
        if labels.len() != height * width {
            return Err(HsiError::InvalidDimensions(format!(
                "mask {height}x{width} needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(HsiError::InvalidDimensions("mask labels must be 0 or 1".into()));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            labels: vec![0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn is_anomaly(&self, p: usize) -> bool {
        self.labels[p] == 1
    }

    pub fn anomaly_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn matches(&self, cube: &HsiCube) -> bool {
        self.height == cube.height && self.width == cube.width
    }

    pub(crate) fn set(&mut self, p: usize) {
        self.labels[p] = 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn band_cube(values: &[f32]) -> HsiCube {
        HsiCube::new(1, values.len(), 1, values.to_vec()).unwrap()
    }

    #[test]
    fn normalize_linear_band() {
        let n = normalize(&band_cube(&[2.0, 4.0, 6.0]));
        assert_eq!(n.values(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn normalize_constant_band_is_zero() {
        let n = normalize(&band_cube(&[5.0, 5.0, 5.0]));
        assert_eq!(n.values(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn normalize_unit_band_unchanged() {
        let c = band_cube(&[0.0, 0.25, 1.0, 0.7]);
        assert_eq!(normalize(&c), c);
    }

    #[test]
    fn normalize_is_per_band() {
        let c = HsiCube::new(1, 2, 2, vec![0.0, 10.0, 2.0, 30.0]).unwrap();
        assert_eq!(normalize(&c).values(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn rejects_bad_lengths() {
        assert!(HsiCube::new(2, 2, 3, vec![0.0; 11]).is_err());
        assert!(HsiCube::new(0, 2, 3, vec![]).is_err());
        assert!(GroundTruthMask::new(2, 2, vec![0, 1, 2, 0]).is_err());
    }

    #[test]
    fn pixel_layout_is_band_innermost() {
        let c = HsiCube::from_fn(2, 3, 2, |r, col, b| (r * 100 + col * 10 + b) as f32).unwrap();
        assert_eq!(c.pixel(4), &[110.0, 111.0]);
        assert_eq!(c.get(1, 2, 1), 121.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn normalize_idempotent_and_bounded(
                h in 1usize..5, w in 1usize..5, b in 1usize..4,
                seed in proptest::collection::vec(-50.0f32..50.0, 64)
            ) {
                let c = HsiCube::from_fn(h, w, b, |r, col, band| seed[(r * 13 + col * 5 + band * 3) % 64]).unwrap();
                let n1 = normalize(&c);
                prop_assert!(n1.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
                prop_assert_eq!(normalize(&n1), n1);
            }
        }
    }
}
