//! Dual-encoder consensus training on regional sequences.
//!
//! Each epoch is one optimization step on the whole regional sequence:
//! draw representatives, mask the regions that have been hardest to
//! reconstruct so far, compute the original-path and masked-path losses
//! against the masked target, reconcile their gradients and apply AdamW.

mod calibrate;
mod losses;
mod mask;

pub use calibrate::{calibrate_gradients, calibrate_with_primary, Calibrated, Primary};
pub use losses::{consensus_gradients, consensus_losses, k_norm, mean_row_norm, ConsensusLosses};
pub use mask::{generate_mask, DifficultyTracker, MaskVector, MASK_EPS};

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hsi::HsiCube;
use crate::nn::{adamw_step, AdamWConfig, AdamWState, ModelConfig, NnError, RsalAutoencoder};
use crate::segmentation::{draw_representative, AttributeRepository, RegionMap, SegmentError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("expected length {expected}, got {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Pixels per region.
    pub psi: f64,
    pub beta_max: f64,
    /// Fraction of regions masked each epoch.
    pub eta: f64,
    pub norm_k: f64,
    pub hidden: usize,
    pub state_dim: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 5e-4,
            weight_decay: 0.01,
            psi: 150.0,
            beta_max: 2.0,
            eta: 0.01,
            norm_k: 2.0,
            hidden: 256,
            state_dim: 16,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |what: &str| Err(TrainError::InvalidConfig(what.into()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be nonnegative");
        }
        if !(self.psi >= 1.0) {
            return bad("psi must be at least 1");
        }
        if !(self.beta_max >= 0.0 && self.beta_max.is_finite()) {
            return bad("beta_max must be nonnegative");
        }
        if !(0.0..1.0).contains(&self.eta) {
            return bad("eta must lie in [0, 1)");
        }
        if !(self.norm_k >= 1.0 && self.norm_k.is_finite()) {
            return bad("norm_k must be at least 1");
        }
        if self.hidden == 0 || self.state_dim == 0 {
            return bad("hidden and state_dim must be positive");
        }
        Ok(())
    }

    pub fn model_config(&self, bands: usize) -> ModelConfig {
        ModelConfig {
            bands,
            hidden: self.hidden,
            state_dim: self.state_dim,
        }
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_ori: f64,
    pub l_mask: f64,
    pub theta: f64,
    pub applied: bool,
    /// Unmasked reconstruction error per region, in scan order.
    pub region_errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossReport {
    pub epochs: Vec<EpochRecord>,
}

impl LossReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,L_ori,L_mask,theta,applied\n");
        for e in &self.epochs {
            s += &format!("{},{},{},{},{}\n", e.epoch, e.l_ori, e.l_mask, e.theta, e.applied);
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        let path = path.as_ref();
        let io = |source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut f = std::fs::File::create(path).map_err(io)?;
        f.write_all(self.to_csv().as_bytes()).map_err(io)
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Independent random streams, all derived from the run seed.
struct Streams {
    beta: ChaCha8Rng,
    mask: ChaCha8Rng,
    primary: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let stream = |k| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(k);
            r
        };
        Self {
            beta: stream(1),
            mask: stream(2),
            primary: stream(3),
        }
    }
}

/// Fresh model whose decoder output bias starts at the mean regional
/// spectrum, so early steps fit deviations rather than the offset.
pub fn initial_model(repo: &AttributeRepository, cfg: &TrainConfig) -> RsalAutoencoder {
    let mut model = RsalAutoencoder::init(cfg.model_config(repo.bands()), cfg.seed);
    if let Some(mean) = repo.mean_sequence().mean_axis(ndarray::Axis(0)) {
        model.decoder.b_out.assign(&mean);
    }
    model
}

/// Epoch-at-a-time training state.
pub struct Trainer<'a> {
    repo: &'a AttributeRepository,
    cfg: TrainConfig,
    model: RsalAutoencoder,
    opt: AdamWState,
    tracker: DifficultyTracker,
    rng: Streams,
    report: LossReport,
}

impl<'a> Trainer<'a> {
    pub fn new(repo: &'a AttributeRepository, cfg: TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        let model = initial_model(repo, &cfg);
        let opt = AdamWState::new(model.param_count(), cfg.adamw());
        Ok(Self {
            repo,
            tracker: DifficultyTracker::new(repo.n_regions()),
            rng: Streams::new(cfg.seed),
            cfg,
            model,
            opt,
            report: LossReport::default(),
        })
    }

    pub fn model(&self) -> &RsalAutoencoder {
        &self.model
    }

    pub fn tracker(&self) -> &DifficultyTracker {
        &self.tracker
    }

    pub fn step(&mut self) -> Result<&EpochRecord, TrainError> {
        let seq = draw_representative(self.repo, self.cfg.beta_max, &mut self.rng.beta).values;
        let mask = generate_mask(&self.tracker, self.cfg.eta, &mut self.rng.mask);
        let (losses, g_ori, g_mask) = consensus_gradients(&self.model, &seq, &mask, self.cfg.norm_k)?;
        let cal = calibrate_gradients(&g_ori, &g_mask, &mut self.rng.primary)?;
        adamw_step(&mut self.model, &cal.combined, &mut self.opt)?;
        self.tracker.update(&losses.region_errors)?;
        self.report.epochs.push(EpochRecord {
            epoch: self.report.epochs.len(),
            l_ori: losses.l_ori,
            l_mask: losses.l_mask,
            theta: cal.theta,
            applied: cal.applied,
            region_errors: losses.region_errors,
        });
        Ok(self.report.epochs.last().unwrap())
    }

    pub fn finish(self) -> (RsalAutoencoder, LossReport) {
        (self.model, self.report)
    }
}

/// Trains a fresh model for `cfg.epochs` epochs.
pub fn train(
    cube: &HsiCube,
    region_map: &RegionMap,
    repo: &AttributeRepository,
    cfg: &TrainConfig,
) -> Result<(RsalAutoencoder, LossReport), TrainError> {
    if cube.bands() != repo.bands()
        || region_map.n_regions() != repo.n_regions()
        || (cube.height(), cube.width()) != (region_map.height(), region_map.width())
    {
        return Err(TrainError::ShapeMismatch(format!(
            "cube {}x{}x{}, region map {}x{} with {} regions, repository {} regions x {} bands",
            cube.height(),
            cube.width(),
            cube.bands(),
            region_map.height(),
            region_map.width(),
            region_map.n_regions(),
            repo.n_regions(),
            repo.bands()
        )));
    }
    let mut trainer = Trainer::new(repo, cfg.clone())?;
    for _ in 0..cfg.epochs {
        trainer.step()?;
    }
    Ok(trainer.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmentation::{build_repository, segment_regions};

    fn small_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            hidden: 8,
            state_dim: 4,
            eta: 0.1,
            ..TrainConfig::default()
        }
    }

    fn scene() -> (HsiCube, RegionMap, AttributeRepository) {
        let cube = HsiCube::from_fn(12, 12, 4, |r, c, b| ((r * 3 + c * 5 + b * 7) % 11) as f32 / 10.0).unwrap();
        let map = segment_regions(&cube, 12, 0.1, 10).unwrap();
        let repo = build_repository(&cube, &map).unwrap();
        (cube, map, repo)
    }

    #[test]
    fn zero_epochs_returns_the_initial_model() {
        let (cube, map, repo) = scene();
        let cfg = small_cfg(0);
        let (m, report) = train(&cube, &map, &repo, &cfg).unwrap();
        assert_eq!(m, initial_model(&repo, &cfg));
        assert!(report.epochs.is_empty());
    }

    #[test]
    fn history_is_deterministic_and_bookkept() {
        let (cube, map, repo) = scene();
        let cfg = small_cfg(8);
        let (m1, r1) = train(&cube, &map, &repo, &cfg).unwrap();
        let (m2, r2) = train(&cube, &map, &repo, &cfg).unwrap();
        assert_eq!(r1.to_csv(), r2.to_csv());
        assert_eq!(m1, m2);

        let mut trainer = Trainer::new(&repo, cfg).unwrap();
        let mut sum = vec![0.0; repo.n_regions()];
        for _ in 0..8 {
            let rec = trainer.step().unwrap().clone();
            assert!(rec.l_ori >= 0.0 && rec.l_mask >= 0.0);
            assert!((0.0..=std::f64::consts::PI).contains(&rec.theta));
            sum.iter_mut().zip(&rec.region_errors).for_each(|(s, e)| *s += e);
            assert_eq!(trainer.tracker().cumulative(), &sum[..]);
        }
    }

    #[test]
    fn mask_cardinality_every_epoch() {
        let (_, _, repo) = scene();
        let n = repo.n_regions();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut t = DifficultyTracker::new(n);
        for eta in [0.0, 0.1, 0.34, 0.5, 0.9] {
            for _ in 0..50 {
                let m = generate_mask(&t, eta, &mut rng);
                assert_eq!(m.dropped(), (eta * n as f64).round() as usize);
                t.update(&vec![0.3; n]).unwrap();
            }
        }
    }

    #[test]
    fn csv_header_and_rows() {
        let (cube, map, repo) = scene();
        let (_, r) = train(&cube, &map, &repo, &small_cfg(2)).unwrap();
        let csv = r.to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "epoch,L_ori,L_mask,theta,applied");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0,"));
    }

    #[test]
    fn constant_cube_is_fitted() {
        let cube = HsiCube::from_fn(20, 20, 8, |_, _, _| 0.6).unwrap();
        let map = segment_regions(&cube, 16, 0.1, 10).unwrap();
        let repo = build_repository(&cube, &map).unwrap();
        let (_, report) = train(&cube, &map, &repo, &TrainConfig::default()).unwrap();
        let last = report.last().unwrap();
        assert!(last.l_mask < 1e-3, "L_mask {}", last.l_mask);
    }

    #[test]
    fn rejects_bad_config() {
        let (cube, map, repo) = scene();
        for cfg in [
            TrainConfig { eta: 1.0, ..small_cfg(1) },
            TrainConfig { lr: 0.0, ..small_cfg(1) },
            TrainConfig { norm_k: 0.5, ..small_cfg(1) },
        ] {
            assert!(matches!(train(&cube, &map, &repo, &cfg), Err(TrainError::InvalidConfig(_))));
        }
    }
}
