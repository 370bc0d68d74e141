//! Synthetic scenes with implanted anomalies.
//!
//! Background pixels are convex mixtures of a few smooth endmember spectra
//! with spatially smooth abundances. Anomalous pixels follow the additive
//! model `A = B + S`: the background mixture plus `s * anomaly_spectrum`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{GroundTruthMask, HsiCube, HsiError};

const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;
const MIN_BLOB_SIDE: usize = 2;
const MAX_BLOB_SIDE: usize = 6;
/// Sharpness of the abundance softmax; larger values give purer patches.
const ABUNDANCE_SHARPNESS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub n_endmembers: usize,
    pub n_anomalies: usize,
    pub anomaly_fraction: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            height: 100,
            width: 100,
            bands: 50,
            n_endmembers: 3,
            n_anomalies: 5,
            anomaly_fraction: 0.01,
            noise_sigma: 0.01,
            seed: 42,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), HsiError> {
        let bad = |m: String| Err(HsiError::InvalidSpec(m));
        if self.height == 0 || self.width == 0 || self.bands == 0 {
            return bad(format!(
                "dimensions {}x{}x{} must be positive",
                self.height, self.width, self.bands
            ));
        }
        if self.n_endmembers < 2 {
            return bad(format!("n_endmembers must be >= 2, got {}", self.n_endmembers));
        }
        if !(self.anomaly_fraction > 0.0 && self.anomaly_fraction <= 0.1) {
            return bad(format!(
                "anomaly_fraction must lie in (0, 0.1], got {}",
                self.anomaly_fraction
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnomalyBlob {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
    /// Mixing weight `s` of the anomaly spectrum, in `[0.3, 0.7]`.
    pub strength: f64,
}

/// Everything `synth_scene` produces, including the latent components.
#[derive(Debug, Clone)]
pub struct SceneParts {
    pub cube: HsiCube,
    pub mask: GroundTruthMask,
    pub endmembers: Vec<Vec<f64>>,
    pub anomaly_spectrum: Vec<f64>,
    /// `(H*W) x n_endmembers`, rows sum to 1.
    pub abundances: Vec<f64>,
    /// Pure mixture `B` before anomalies and noise, `(H*W) x C`.
    pub background: Vec<f64>,
    pub blobs: Vec<AnomalyBlob>,
}

pub fn synth_scene(spec: &SceneSpec) -> Result<(HsiCube, GroundTruthMask), HsiError> {
    let parts = synth_scene_parts(spec)?;
    Ok((parts.cube, parts.mask))
}

pub fn synth_scene_parts(spec: &SceneSpec) -> Result<SceneParts, HsiError> {
    spec.validate()?;
    let (h, w, bands, k) = (spec.height, spec.width, spec.bands, spec.n_endmembers);
    let n = h * w;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let endmembers: Vec<Vec<f64>> = (0..k).map(|_| smooth_spectrum(bands, &mut rng)).collect();
    let anomaly_spectrum = smooth_spectrum(bands, &mut rng);

    // Abundances: softmax over standardized, blurred white-noise fields.
    let sigma = (h.max(w) as f64 / 10.0).max(1.0);
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let mut logits = vec![0.0; n * k];
    for e in 0..k {
        let noise: Vec<f64> = (0..n).map(|_| std_normal.sample(&mut rng)).collect();
        let field = standardize(gaussian_blur(&noise, h, w, sigma));
        for p in 0..n {
            logits[p * k + e] = ABUNDANCE_SHARPNESS * field[p];
        }
    }
    let mut abundances = vec![0.0; n * k];
    for p in 0..n {
        let row = &logits[p * k..(p + 1) * k];
        let top = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = row.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = weights.iter().sum();
        for e in 0..k {
            abundances[p * k + e] = weights[e] / total;
        }
    }

    let mut background = vec![0.0; n * bands];
    for p in 0..n {
        for (e, em) in endmembers.iter().enumerate() {
            let a = abundances[p * k + e];
            for b in 0..bands {
                background[p * bands + b] += a * em[b];
            }
        }
    }

    let mut mask = GroundTruthMask::zeros(h, w);
    let blobs = place_blobs(spec, &mut mask, &mut rng)?;

    let mut values = background.clone();
    for blob in &blobs {
        for r in blob.row..blob.row + blob.height {
            for c in blob.col..blob.col + blob.width {
                let p = r * w + c;
                for b in 0..bands {
                    values[p * bands + b] += blob.strength * anomaly_spectrum[b];
                }
            }
        }
    }
    if spec.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, spec.noise_sigma).unwrap();
        for v in values.iter_mut() {
            *v += noise.sample(&mut rng);
        }
    }
    let cube = HsiCube::new(
        h,
        w,
        bands,
        values.iter().map(|v| v.clamp(0.0, 1.0) as f32).collect(),
    )?;

    Ok(SceneParts {
        cube,
        mask,
        endmembers,
        anomaly_spectrum,
        abundances,
        background,
        blobs,
    })
}

/// Baseline plus a few Gaussian bumps, kept inside `[0.05, 0.5]` so that
/// background + 0.7 * anomaly never exceeds 1 before noise.
fn smooth_spectrum(bands: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let base = rng.random_range(0.08..0.2);
    let bumps: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            let center = rng.random_range(0.0..bands as f64);
            let width = rng.random_range(0.08..0.3) * bands as f64 + 0.5;
            let amp = rng.random_range(-0.05..0.3);
            (center, width, amp)
        })
        .collect();
    (0..bands)
        .map(|b| {
            let x = b as f64;
            let v = bumps.iter().fold(base, |acc, &(c, wd, a)| {
                acc + a * (-0.5 * ((x - c) / wd).powi(2)).exp()
            });
            v.clamp(0.05, 0.5)
        })
        .collect()
}

fn place_blobs(
    spec: &SceneSpec,
    mask: &mut GroundTruthMask,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<AnomalyBlob>, HsiError> {
    let (h, w) = (spec.height, spec.width);
    let mut blobs = Vec::new();
    if spec.n_anomalies == 0 {
        return Ok(blobs);
    }
    let target = (spec.anomaly_fraction * (h * w) as f64).round().max(1.0) as usize;
    // Size blobs so that n_anomalies of them land near the target fraction.
    let ideal = ((target as f64 / spec.n_anomalies as f64).sqrt())
        .clamp(MIN_BLOB_SIDE as f64, MAX_BLOB_SIDE as f64);
    let mut placed = 0usize;
    while blobs.len() < spec.n_anomalies && placed < target {
        let mut side = |extent: usize| {
            let jitter = rng.random_range(-0.5..0.5);
            ((ideal + jitter).round() as usize)
                .clamp(MIN_BLOB_SIDE, MAX_BLOB_SIDE)
                .min(extent)
        };
        let bh = side(h);
        let bw = side(w);
        let strength = rng.random_range(0.3..=0.7);
        let mut spot = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let row = rng.random_range(0..=h - bh);
            let col = rng.random_range(0..=w - bw);
            let free = (row..row + bh).all(|r| (col..col + bw).all(|c| !mask.is_anomaly(r * w + c)));
            if free {
                spot = Some((row, col));
                break;
            }
        }
        let (row, col) = spot.ok_or(HsiError::PlacementFailure {
            blob: blobs.len(),
            attempts: MAX_PLACEMENT_ATTEMPTS,
        })?;
        for r in row..row + bh {
            for c in col..col + bw {
                mask.set(r * w + c);
            }
        }
        placed += bh * bw;
        blobs.push(AnomalyBlob {
            row,
            col,
            height: bh,
            width: bw,
            strength,
        });
    }
    Ok(blobs)
}

fn gaussian_blur(field: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|v| v / norm).collect();
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;

    let mut tmp = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            tmp[r * w + c] = kernel
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * field[r * w + clamp(c as isize + j as isize - radius, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] = kernel
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * tmp[clamp(r as isize + j as isize - radius, h) * w + c])
                .sum();
        }
    }
    out
}

fn standardize(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    for x in v.iter_mut() {
        *x = if sd > 0.0 { (*x - mean) / sd } else { 0.0 };
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SceneSpec {
        SceneSpec {
            height: 40,
            width: 30,
            bands: 12,
            seed,
            ..SceneSpec::default()
        }
    }

    #[test]
    fn pure_mixture_without_anomalies() {
        let spec = SceneSpec {
            noise_sigma: 0.0,
            n_anomalies: 0,
            ..small(3)
        };
        let parts = synth_scene_parts(&spec).unwrap();
        assert_eq!(parts.mask.anomaly_count(), 0);
        let k = spec.n_endmembers;
        for p in 0..spec.height * spec.width {
            let a = &parts.abundances[p * k..(p + 1) * k];
            assert!(a.iter().all(|&x| x >= 0.0));
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for b in 0..spec.bands {
                let mix: f64 = (0..k).map(|e| a[e] * parts.endmembers[e][b]).sum();
                assert!((parts.cube.pixel(p)[b] as f64 - mix).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let (c1, m1) = synth_scene(&small(9)).unwrap();
        let (c2, m2) = synth_scene(&small(9)).unwrap();
        assert_eq!(c1, c2);
        assert_eq!(m1, m2);
        let (c3, _) = synth_scene(&small(10)).unwrap();
        assert_ne!(c1, c3);
    }

    #[test]
    fn anomaly_fraction_is_met() {
        for seed in 0..20 {
            let spec = SceneSpec {
                seed,
                ..SceneSpec::default()
            };
            let (_, mask) = synth_scene(&spec).unwrap();
            let count = mask.anomaly_count();
            assert!((50..=150).contains(&count), "seed {seed}: {count} anomalous pixels");
        }
    }

    #[test]
    fn anomalies_are_additive_offsets() {
        let spec = SceneSpec {
            noise_sigma: 0.0,
            ..small(5)
        };
        let parts = synth_scene_parts(&spec).unwrap();
        assert!(!parts.blobs.is_empty());
        let bands = spec.bands;
        for blob in &parts.blobs {
            assert!((0.3..=0.7).contains(&blob.strength));
            assert!((2..=6).contains(&blob.height) && (2..=6).contains(&blob.width));
            for r in blob.row..blob.row + blob.height {
                for c in blob.col..blob.col + blob.width {
                    let p = r * spec.width + c;
                    assert!(parts.mask.is_anomaly(p));
                    for b in 0..bands {
                        let diff = parts.cube.pixel(p)[b] as f64 - parts.background[p * bands + b];
                        assert!((diff - blob.strength * parts.anomaly_spectrum[b]).abs() < 1e-6);
                    }
                }
            }
        }
        let blob_pixels: usize = parts.blobs.iter().map(|b| b.height * b.width).sum();
        assert_eq!(blob_pixels, parts.mask.anomaly_count());
    }

    #[test]
    fn values_clipped_to_unit_interval() {
        let spec = SceneSpec {
            noise_sigma: 0.3,
            ..small(1)
        };
        let (cube, _) = synth_scene(&spec).unwrap();
        let (lo, hi) = cube.value_range();
        assert!(lo >= 0.0 && hi <= 1.0);
    }

    #[test]
    fn invalid_specs_rejected() {
        for spec in [
            SceneSpec { n_endmembers: 1, ..small(0) },
            SceneSpec { anomaly_fraction: 0.0, ..small(0) },
            SceneSpec { anomaly_fraction: 0.2, ..small(0) },
        ] {
            assert!(matches!(synth_scene(&spec), Err(HsiError::InvalidSpec(_))));
        }
    }

    #[test]
    fn crowded_scene_fails_placement() {
        // one 2x2 blob fills a 2x2 scene and already meets the target
        let spec = SceneSpec {
            height: 2,
            width: 2,
            n_anomalies: 3,
            anomaly_fraction: 0.1,
            ..small(0)
        };
        assert_eq!(synth_scene(&spec).unwrap().1.anomaly_count(), 4);

        // past validation, a target that cannot fit must surface as an error
        let spec = SceneSpec {
            height: 3,
            width: 3,
            n_anomalies: 4,
            anomaly_fraction: 1.0,
            ..small(0)
        };
        let mut mask = GroundTruthMask::zeros(3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            place_blobs(&spec, &mut mask, &mut rng),
            Err(HsiError::PlacementFailure { blob: 1, .. })
        ));
    }
}
