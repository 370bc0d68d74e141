//! Region splitting, per-region attribute statistics and representative
//! sampling.
//!
//! A [`RegionMap`] assigns every pixel to one of `N_r` spatially connected
//! regions and fixes the order in which regions are unfolded into a
//! sequence: by centroid, row-major, starting from the upper-left corner.

mod repository;
mod sampling;
mod slic;

pub use repository::{build_repository, AttributeRepository};
pub use sampling::{draw_representative, project_regions_to_pixels, RegionSequence};
pub use slic::{segment_regions, SlicParams};

use std::path::Path;

use thiserror::Error;

use crate::hsi::{self, HsiError};

#[derive(Debug, Error)]
pub enum SegmentError {
    #[error("region target {target} outside [1, {pixels}]")]
    InvalidTarget { target: usize, pixels: usize },
    #[error("invalid segmentation parameter: {0}")]
    InvalidParameter(String),
    #[error("expected {expected} region values, got {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("invalid region map: {0}")]
    InvalidRegionMap(String),
    #[error(transparent)]
    Io(#[from] HsiError),
}

/// Partition of an `H x W` raster into regions `0..n_regions`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMap {
    height: usize,
    width: usize,
    region_of: Vec<u32>,
    n_regions: usize,
    order: Vec<usize>,
}

impl RegionMap {
    /// Validates a label raster and computes the scan order.
    ///
    /// Labels must be dense: every index below `max + 1` owns a pixel.
    pub fn from_labels(height: usize, width: usize, region_of: Vec<u32>) -> Result<Self, SegmentError> {
        if region_of.len() != height * width || region_of.is_empty() {
            return Err(SegmentError::InvalidRegionMap(format!(
                "{height}x{width} raster with {} labels",
                region_of.len()
            )));
        }
        let n_regions = *region_of.iter().max().unwrap() as usize + 1;
        let mut seen = vec![false; n_regions];
        for &r in &region_of {
            seen[r as usize] = true;
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(SegmentError::InvalidRegionMap(format!(
                "region {missing} owns no pixel"
            )));
        }
        let mut map = Self {
            height,
            width,
            region_of,
            n_regions,
            order: Vec::new(),
        };
        map.order = region_scan_order(&map);
        Ok(map)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_regions(&self) -> usize {
        self.n_regions
    }

    pub fn n_pixels(&self) -> usize {
        self.region_of.len()
    }

    pub fn region_of(&self) -> &[u32] {
        &self.region_of
    }

    pub fn region_at(&self, p: usize) -> usize {
        self.region_of[p] as usize
    }

    /// Region indices in scan order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn region_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_regions];
        for &r in &self.region_of {
            sizes[r as usize] += 1;
        }
        sizes
    }

    /// `(row, col)` centroid of every region.
    pub fn centroids(&self) -> Vec<(f64, f64)> {
        let mut acc = vec![(0.0, 0.0, 0usize); self.n_regions];
        for (p, &r) in self.region_of.iter().enumerate() {
            let e = &mut acc[r as usize];
            e.0 += (p / self.width) as f64;
            e.1 += (p % self.width) as f64;
            e.2 += 1;
        }
        acc.into_iter()
            .map(|(r, c, n)| (r / n as f64, c / n as f64))
            .collect()
    }

    /// Writes the label raster as an `HSC1` u32 container and the scan
    /// order as a JSON array next to it.
    pub fn save(&self, raster: impl AsRef<Path>, order_json: impl AsRef<Path>) -> Result<(), SegmentError> {
        hsi::save_region_raster(self.height, self.width, &self.region_of, raster)?;
        let json = serde_json::to_string(&self.order).expect("order serializes");
        std::fs::write(order_json.as_ref(), json).map_err(|source| {
            SegmentError::Io(HsiError::IoFailure {
                path: order_json.as_ref().to_path_buf(),
                source,
            })
        })
    }

    /// Loads a raster written by [`RegionMap::save`]; the scan order is
    /// recomputed and checked against the stored one when present.
    pub fn load(raster: impl AsRef<Path>, order_json: Option<&Path>) -> Result<Self, SegmentError> {
        let (h, w, labels) = hsi::load_region_raster(raster)?;
        let map = Self::from_labels(h, w, labels)?;
        if let Some(path) = order_json {
            let text = std::fs::read_to_string(path).map_err(|source| {
                SegmentError::Io(HsiError::IoFailure {
                    path: path.to_path_buf(),
                    source,
                })
            })?;
            let order: Vec<usize> = serde_json::from_str(&text)
                .map_err(|e| SegmentError::InvalidRegionMap(format!("order json: {e}")))?;
            if order != map.order {
                return Err(SegmentError::InvalidRegionMap(
                    "stored scan order disagrees with region centroids".into(),
                ));
            }
        }
        Ok(map)
    }
}

/// Regions sorted by centroid row, then centroid column, then index.
pub fn region_scan_order(map: &RegionMap) -> Vec<usize> {
    let centroids = map.centroids();
    let mut order: Vec<usize> = (0..map.n_regions).collect();
    order.sort_by(|&a, &b| {
        centroids[a]
            .0
            .total_cmp(&centroids[b].0)
            .then(centroids[a].1.total_cmp(&centroids[b].1))
            .then(a.cmp(&b))
    });
    order
}
