use ndarray::Array2;
use rand::Rng;

use super::{AttributeRepository, RegionMap, SegmentError};

/// One representative spectrum per region, rows in scan order.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSequence {
    pub values: Array2<f64>,
    /// The `beta` drawn for each row.
    pub beta_used: Vec<f64>,
    /// Rows where `mu + beta * sigma` left `[min, max]` and `mu` was emitted.
    pub fell_back: Vec<bool>,
}

impl RegionSequence {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }
}

/// Draws `mu + beta * sigma` per region with `beta ~ U[-beta_max, beta_max]`.
///
/// If the candidate leaves `[min, max]` in any band, the whole row falls
/// back to the region mean.
pub fn draw_representative<R: Rng + ?Sized>(
    repo: &AttributeRepository,
    beta_max: f64,
    rng: &mut R,
) -> RegionSequence {
    let (nr, bands) = (repo.n_regions(), repo.bands());
    let mut values = Array2::zeros((nr, bands));
    let mut beta_used = Vec::with_capacity(nr);
    let mut fell_back = Vec::with_capacity(nr);
    for (j, &region) in repo.order().iter().enumerate() {
        let beta = beta_max * (2.0 * rng.random::<f64>() - 1.0);
        let (mu, sigma) = (repo.mean(region), repo.std(region));
        let (lo, hi) = (repo.min(region), repo.max(region));
        let candidate: Vec<f64> = mu.iter().zip(sigma).map(|(m, s)| m + beta * s).collect();
        let inside = candidate
            .iter()
            .enumerate()
            .all(|(b, &v)| lo[b] <= v && v <= hi[b]);
        let row = if inside { &candidate[..] } else { mu };
        values.row_mut(j).iter_mut().zip(row).for_each(|(dst, &v)| *dst = v);
        beta_used.push(beta);
        fell_back.push(!inside);
    }
    RegionSequence {
        values,
        beta_used,
        fell_back,
    }
}

/// Broadcasts one scalar per region (indexed by region id) to its pixels.
pub fn project_regions_to_pixels(region_values: &[f64], region_map: &RegionMap) -> Result<Vec<f64>, SegmentError> {
    if region_values.len() != region_map.n_regions() {
        return Err(SegmentError::LengthMismatch {
            expected: region_map.n_regions(),
            found: region_values.len(),
        });
    }
    Ok(region_map
        .region_of()
        .iter()
        .map(|&r| region_values[r as usize])
        .collect())
}
