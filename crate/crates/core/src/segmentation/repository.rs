use super::{RegionMap, SegmentError};
use crate::hsi::HsiCube;

/// Per-region spectral statistics, each stored as an `N_r x C` row-major
/// array indexed by region (not scan position).
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeRepository {
    n_regions: usize,
    bands: usize,
    mean: Vec<f64>,
    std: Vec<f64>,
    min: Vec<f64>,
    max: Vec<f64>,
    counts: Vec<usize>,
    order: Vec<usize>,
}

impl AttributeRepository {
    pub fn n_regions(&self) -> usize {
        self.n_regions
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn mean(&self, region: usize) -> &[f64] {
        &self.mean[region * self.bands..(region + 1) * self.bands]
    }

    pub fn std(&self, region: usize) -> &[f64] {
        &self.std[region * self.bands..(region + 1) * self.bands]
    }

    pub fn min(&self, region: usize) -> &[f64] {
        &self.min[region * self.bands..(region + 1) * self.bands]
    }

    pub fn max(&self, region: usize) -> &[f64] {
        &self.max[region * self.bands..(region + 1) * self.bands]
    }

    pub fn count(&self, region: usize) -> usize {
        self.counts[region]
    }

    /// Scan order of the region map this repository was built from.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Region means stacked in scan order, `N_r x C`.
    pub fn mean_sequence(&self) -> ndarray::Array2<f64> {
        ndarray::Array2::from_shape_fn((self.n_regions, self.bands), |(j, b)| {
            self.mean[self.order[j] * self.bands + b]
        })
    }

    /// Builds a repository directly from statistics. Intended for tests and
    /// tooling; `build_repository` is the normal constructor.
    pub fn from_stats(
        bands: usize,
        mean: Vec<f64>,
        std: Vec<f64>,
        min: Vec<f64>,
        max: Vec<f64>,
        order: Vec<usize>,
    ) -> Result<Self, SegmentError> {
        let n_regions = order.len();
        let len = n_regions * bands;
        if [mean.len(), std.len(), min.len(), max.len()].iter().any(|&l| l != len) {
            return Err(SegmentError::DimMismatch(format!(
                "statistics must hold {n_regions}x{bands} entries"
            )));
        }
        let mut sorted = order.clone();
        sorted.sort_unstable();
        if sorted.iter().enumerate().any(|(i, &o)| i != o) {
            return Err(SegmentError::InvalidRegionMap("order is not a permutation".into()));
        }
        Ok(Self {
            n_regions,
            bands,
            mean,
            std,
            min,
            max,
            counts: vec![0; n_regions],
            order,
        })
    }
}

/// Per-region mean, population standard deviation, minimum and maximum.
pub fn build_repository(cube: &HsiCube, region_map: &RegionMap) -> Result<AttributeRepository, SegmentError> {
    if cube.height() != region_map.height() || cube.width() != region_map.width() {
        return Err(SegmentError::DimMismatch(format!(
            "cube {}x{} vs region map {}x{}",
            cube.height(),
            cube.width(),
            region_map.height(),
            region_map.width()
        )));
    }
    let (nr, bands) = (region_map.n_regions(), cube.bands());
    let mut counts = vec![0usize; nr];
    let mut sum = vec![0.0; nr * bands];
    let mut min = vec![f64::INFINITY; nr * bands];
    let mut max = vec![f64::NEG_INFINITY; nr * bands];
    for p in 0..cube.n_pixels() {
        let r = region_map.region_at(p);
        counts[r] += 1;
        for (b, &v) in cube.pixel(p).iter().enumerate() {
            let v = v as f64;
            let i = r * bands + b;
            sum[i] += v;
            min[i] = min[i].min(v);
            max[i] = max[i].max(v);
        }
    }
    let mean: Vec<f64> = sum
        .iter()
        .enumerate()
        .map(|(i, s)| s / counts[i / bands] as f64)
        .collect();

    let mut sq = vec![0.0; nr * bands];
    for p in 0..cube.n_pixels() {
        let r = region_map.region_at(p);
        for (b, &v) in cube.pixel(p).iter().enumerate() {
            let d = v as f64 - mean[r * bands + b];
            sq[r * bands + b] += d * d;
        }
    }
    let std = sq
        .iter()
        .enumerate()
        .map(|(i, s)| (s / counts[i / bands] as f64).sqrt())
        .collect();

    // rounding can nudge a mean past an extreme of identical values
    let mean = mean
        .into_iter()
        .enumerate()
        .map(|(i, m)| m.clamp(min[i], max[i]))
        .collect();

    Ok(AttributeRepository {
        n_regions: nr,
        bands,
        mean,
        std,
        min,
        max,
        counts,
        order: region_map.order().to_vec(),
    })
}
