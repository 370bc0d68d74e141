//! Pixel scoring: regional Mahalanobis map, dense reconstruction-error map,
//! their product, and the global RX baseline.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use ndarray::{s, Array2, ArrayView2, Axis};
use thiserror::Error;

use crate::hsi::{self, HsiCube, HsiError};
use crate::nn::{EncoderPath, NnError, RsalAutoencoder};
use crate::segmentation::{project_regions_to_pixels, AttributeRepository, RegionMap, SegmentError};
use crate::training::k_norm;

/// Floor for per-band variances; added to covariance diagonals.
pub const COV_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DetectionError {
    #[error("model parameters were never initialized")]
    UntrainedModel,
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Io(#[from] HsiError),
}

/// `H x W` score raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionMap {
    pub height: usize,
    pub width: usize,
    pub scores: Vec<f64>,
    pub threshold: Option<f64>,
}

impl DetectionMap {
    pub fn with_threshold(mut self, tau: f64) -> Self {
        self.threshold = Some(tau);
        self
    }

    /// `scores > tau`, if a threshold is set.
    pub fn binary(&self) -> Option<Vec<bool>> {
        self.threshold.map(|t| self.scores.iter().map(|&s| s > t).collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), HsiError> {
        let v: Vec<f32> = self.scores.iter().map(|&s| s as f32).collect();
        hsi::save_score_map(self.height, self.width, &v, path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DetectOptions {
    /// Full covariance instead of per-band variances in the regional score.
    pub full_covariance: bool,
    pub encoder: Option<EncoderPath>,
    /// Split the pixel sequence into chunks of this length.
    pub chunk: Option<usize>,
}

/// Mean and per-band variance of the regional error vectors. Variances are
/// floored at [`COV_EPS`] rather than shifted by it, so rescaling a band
/// leaves scores unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct HolisticStats {
    pub gamma: Vec<f64>,
    pub sigma_diag: Vec<f64>,
}

impl HolisticStats {
    pub fn from_errors(errors: ArrayView2<f64>) -> Self {
        let gamma = errors.mean_axis(Axis(0)).expect("at least one region");
        let sigma_diag = errors
            .axis_iter(Axis(1))
            .zip(&gamma)
            .map(|(col, g)| (col.iter().map(|v| (v - g).powi(2)).sum::<f64>() / col.len() as f64).max(COV_EPS))
            .collect();
        Self {
            gamma: gamma.to_vec(),
            sigma_diag,
        }
    }
}

/// Squared Mahalanobis distance of every row of `errors` from the row mean.
pub fn holistic_scores(errors: ArrayView2<f64>, full_covariance: bool) -> Vec<f64> {
    let stats = HolisticStats::from_errors(errors);
    if !full_covariance {
        return errors
            .rows()
            .into_iter()
            .map(|e| {
                e.iter()
                    .zip(&stats.gamma)
                    .zip(&stats.sigma_diag)
                    .map(|((v, g), s)| (v - g).powi(2) / s)
                    .sum()
            })
            .collect();
    }
    let centered = &errors - &ndarray::Array1::from(stats.gamma);
    mahalanobis_rows(centered.view())
}

/// `x^T (cov + eps I)^-1 x` for every row of an already centered matrix.
fn mahalanobis_rows(centered: ArrayView2<f64>) -> Vec<f64> {
    let (n, c) = centered.dim();
    let mut cov = centered.t().dot(&centered) / n as f64;
    cov.diag_mut().mapv_inplace(|v| v + COV_EPS);
    let cov = DMatrix::from_fn(c, c, |i, j| cov[[i, j]]);
    let chol = cov.cholesky().expect("regularized covariance is positive definite");
    let l = chol.l();
    let rhs = DMatrix::from_fn(c, n, |i, j| centered[[j, i]]);
    let y = l.solve_lower_triangular(&rhs).expect("nonsingular factor");
    y.column_iter().map(|col| col.norm_squared()).collect()
}

fn ensure_ready(model: &RsalAutoencoder, bands: usize) -> Result<(), DetectionError> {
    if !model.is_initialized() {
        return Err(DetectionError::UntrainedModel);
    }
    if model.config().bands != bands {
        return Err(DetectionError::DimMismatch(format!(
            "model expects {} bands, data has {bands}",
            model.config().bands
        )));
    }
    Ok(())
}

/// Regional error vectors `mu_i - D(E(mu))_i`, one row per region index.
pub fn regional_errors(model: &RsalAutoencoder, repo: &AttributeRepository) -> Result<Array2<f64>, DetectionError> {
    ensure_ready(model, repo.bands())?;
    let mu = repo.mean_sequence();
    let recon = model.forward(mu.view(), EncoderPath::Original)?;
    let diff = mu - recon;
    let mut by_region = Array2::zeros(diff.dim());
    for (j, &r) in repo.order().iter().enumerate() {
        by_region.row_mut(r).assign(&diff.row(j));
    }
    Ok(by_region)
}

pub fn holistic_map(
    model: &RsalAutoencoder,
    repo: &AttributeRepository,
    region_map: &RegionMap,
    opts: &DetectOptions,
) -> Result<Raster, DetectionError> {
    let errors = regional_errors(model, repo)?;
    let scores = holistic_scores(errors.view(), opts.full_covariance);
    Ok(Raster {
        height: region_map.height(),
        width: region_map.width(),
        values: project_regions_to_pixels(&scores, region_map)?,
    })
}

/// Per-pixel `||x - D(enc(x))||_k`, all pixels fed as one row-major
/// sequence (or consecutive chunks of it).
pub fn detail_map(
    model: &RsalAutoencoder,
    cube: &HsiCube,
    k: f64,
    opts: &DetectOptions,
) -> Result<Raster, DetectionError> {
    ensure_ready(model, cube.bands())?;
    let x = cube.to_pixel_matrix();
    let n = x.nrows();
    let chunk = opts.chunk.filter(|&c| c > 0).unwrap_or(n);
    let path = opts.encoder.unwrap_or(EncoderPath::Original);
    let mut values = Vec::with_capacity(n);
    for start in (0..n).step_by(chunk) {
        let part = x.slice(s![start..(start + chunk).min(n), ..]);
        let recon = model.forward(part, path)?;
        for (a, b) in part.rows().into_iter().zip(recon.rows()) {
            let r: Vec<f64> = a.iter().zip(b).map(|(p, q)| p - q).collect();
            values.push(k_norm(&r, k));
        }
    }
    Ok(Raster {
        height: cube.height(),
        width: cube.width(),
        values,
    })
}

/// Elementwise product.
pub fn fuse(holistic: &Raster, detail: &Raster) -> Result<DetectionMap, DetectionError> {
    if (holistic.height, holistic.width) != (detail.height, detail.width) || holistic.values.len() != detail.values.len() {
        return Err(DetectionError::DimMismatch(format!(
            "{}x{} vs {}x{}",
            holistic.height, holistic.width, detail.height, detail.width
        )));
    }
    Ok(DetectionMap {
        height: holistic.height,
        width: holistic.width,
        scores: holistic.values.iter().zip(&detail.values).map(|(a, b)| a * b).collect(),
        threshold: None,
    })
}

/// Global RX: squared Mahalanobis distance of every pixel from the mean
/// spectrum under the (regularized) pixel covariance.
pub fn rx_baseline(cube: &HsiCube) -> DetectionMap {
    let x = cube.to_pixel_matrix();
    let mean = x.mean_axis(Axis(0)).unwrap();
    let centered = &x - &mean;
    DetectionMap {
        height: cube.height(),
        width: cube.width(),
        scores: mahalanobis_rows(centered.view()),
        threshold: None,
    }
}

/// Same as [`rx_baseline`] through an explicit inverse; kept for checking.
#[doc(hidden)]
pub fn rx_explicit_inverse(cube: &HsiCube) -> Vec<f64> {
    let (n, c) = (cube.n_pixels(), cube.bands());
    let x = DMatrix::from_fn(n, c, |p, b| cube.pixel(p)[b] as f64);
    let mean: DVector<f64> = x.row_mean().transpose();
    let mut cov = DMatrix::zeros(c, c);
    for p in 0..n {
        let d = x.row(p).transpose() - &mean;
        cov += &d * d.transpose();
    }
    cov /= n as f64;
    cov += DMatrix::identity(c, c) * COV_EPS;
    let inv = cov.try_inverse().unwrap();
    (0..n)
        .map(|p| {
            let d = x.row(p).transpose() - &mean;
            (d.transpose() * &inv * &d)[(0, 0)]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelConfig;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn raster(h: usize, w: usize, v: Vec<f64>) -> Raster {
        Raster { height: h, width: w, values: v }
    }

    #[test]
    fn identical_errors_score_zero() {
        let e = array![[0.3, -1.0], [0.3, -1.0], [0.3, -1.0]];
        assert!(holistic_scores(e.view(), false).iter().all(|&s| s == 0.0));
    }

    #[test]
    fn symmetric_errors_score_equally() {
        let e = array![[1.0, 2.0], [3.0, 4.0], [2.0, 3.0]];
        let s = holistic_scores(e.view(), false);
        assert!((s[0] - s[1]).abs() < 1e-12);
    }

    #[test]
    fn hand_set_errors_match_brute_force() {
        let e = array![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]];
        let s = holistic_scores(e.view(), false);
        // gamma = (1, 1); variance per band = 2/3
        let var = 2.0 / 3.0;
        let expect = [2.0 / var, 0.0, 2.0 / var];
        for (a, b) in s.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn band_scaling_leaves_diagonal_scores_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e = Array2::from_shape_simple_fn((20, 5), || rng.random_range(-1.0..1.0));
        let base = holistic_scores(e.view(), false);
        for band in 0..5 {
            let mut scaled = e.clone();
            scaled.column_mut(band).mapv_inplace(|v| v * 10.0);
            for (a, b) in base.iter().zip(holistic_scores(scaled.view(), false)) {
                assert!((a - b).abs() <= 1e-9 * a.abs().max(f64::MIN_POSITIVE));
            }
        }
    }

    #[test]
    fn full_covariance_matches_diagonal_for_uncorrelated_bands() {
        let e = array![[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]];
        let d = holistic_scores(e.view(), false);
        let f = holistic_scores(e.view(), true);
        // the full form regularizes by adding eps instead of flooring
        for (a, b) in d.iter().zip(&f) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn fuse_properties() {
        let a = raster(1, 3, vec![1.0, 2.0, 3.0]);
        let b = raster(1, 3, vec![0.5, 0.0, 4.0]);
        assert_eq!(fuse(&a, &b).unwrap().scores, fuse(&b, &a).unwrap().scores);
        assert!(fuse(&raster(1, 3, vec![0.0; 3]), &b).unwrap().scores.iter().all(|&v| v == 0.0));
        assert_eq!(fuse(&raster(1, 3, vec![1.0; 3]), &b).unwrap().scores, b.values);
        assert!(matches!(fuse(&a, &raster(3, 1, vec![0.0; 3])), Err(DetectionError::DimMismatch(_))));
        let m = fuse(&a, &b).unwrap().with_threshold(1.5);
        assert_eq!(m.binary().unwrap(), vec![false, false, true]);
    }

    #[test]
    fn fuse_with_constant_factor_preserves_ranking() {
        let d = raster(1, 4, vec![0.3, 0.1, 0.9, 0.5]);
        let f = fuse(&raster(1, 4, vec![2.5; 4]), &d).unwrap();
        let rank = |v: &[f64]| {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
            idx
        };
        assert_eq!(rank(&f.scores), rank(&d.values));
    }

    #[test]
    fn rx_constant_cube_is_zero() {
        let cube = HsiCube::from_fn(4, 4, 3, |_, _, b| b as f32).unwrap();
        assert!(rx_baseline(&cube).scores.iter().all(|&s| s.abs() < 1e-12));
    }

    #[test]
    fn rx_uncorrelated_hand_case() {
        // band 0 takes +-1, band 1 takes +-2 independently: variances 1 and 4
        let vals = [(1.0, 2.0), (1.0, -2.0), (-1.0, 2.0), (-1.0, -2.0)];
        let cube = HsiCube::from_fn(2, 2, 2, |r, c, b| {
            let v = vals[r * 2 + c];
            (if b == 0 { v.0 } else { v.1 }) as f32
        })
        .unwrap();
        for s in rx_baseline(&cube).scores {
            assert!((s - 2.0).abs() < 1e-5);
        }
    }

    #[test]
    fn rx_matches_explicit_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let cube = HsiCube::from_fn(8, 8, 4, |_, _, _| rng.random::<f32>()).unwrap();
            let a = rx_baseline(&cube).scores;
            let b = rx_explicit_inverse(&cube);
            for (x, y) in a.iter().zip(&b) {
                assert!(*x >= 0.0);
                assert!((x - y).abs() < 1e-8 * y.abs().max(1.0));
            }
        }
    }

    fn cfg(bands: usize) -> ModelConfig {
        ModelConfig {
            bands,
            hidden: 4,
            state_dim: 2,
        }
    }

    #[test]
    fn untrained_model_is_rejected() {
        let m = RsalAutoencoder::uninitialized(cfg(3));
        let cube = HsiCube::zeros(2, 2, 3).unwrap();
        assert!(matches!(
            detail_map(&m, &cube, 2.0, &DetectOptions::default()),
            Err(DetectionError::UntrainedModel)
        ));
    }

    #[test]
    fn zero_model_on_zero_cube_gives_zero_map() {
        let m = RsalAutoencoder::zeros(cfg(3));
        let cube = HsiCube::zeros(3, 2, 3).unwrap();
        let d = detail_map(&m, &cube, 2.0, &DetectOptions::default()).unwrap();
        assert_eq!(d.values, vec![0.0; 6]);
    }

    #[test]
    fn single_pixel_detail_matches_hand_unroll() {
        let m = RsalAutoencoder::init(cfg(3), 5);
        let cube = HsiCube::new(1, 1, 3, vec![0.2, 0.5, 0.9]).unwrap();
        let d = detail_map(&m, &cube, 2.0, &DetectOptions::default()).unwrap();
        let x = array![[0.2f32 as f64, 0.5f32 as f64, 0.9f32 as f64]];
        let recon = m.forward(x.view(), EncoderPath::Original).unwrap();
        let expect = (&x - &recon).mapv(|v| v * v).sum().sqrt();
        assert!((d.values[0] - expect).abs() < 1e-14);
    }

    #[test]
    fn chunking_only_regroups_the_sequence() {
        let m = RsalAutoencoder::init(cfg(3), 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cube = HsiCube::from_fn(4, 5, 3, |_, _, _| rng.random::<f32>()).unwrap();
        let whole = detail_map(&m, &cube, 2.0, &DetectOptions::default()).unwrap();
        let single = detail_map(&m, &cube, 2.0, &DetectOptions { chunk: Some(1), ..Default::default() }).unwrap();
        for p in 0..20 {
            let px = Array2::from_shape_vec((1, 3), cube.pixel(p).iter().map(|&v| v as f64).collect()).unwrap();
            let r = m.forward(px.view(), EncoderPath::Original).unwrap();
            assert!((single.values[p] - (&px - &r).mapv(|v| v * v).sum().sqrt()).abs() < 1e-14);
        }
        assert_eq!(whole.values.len(), 20);
    }
}
