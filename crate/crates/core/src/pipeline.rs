//! End-to-end wiring: normalize, segment, train, detect, evaluate.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{detail_map, fuse, holistic_map, DetectOptions, DetectionMap, Raster};
use crate::eval::{roc_curve, BenchReport, RocCurve};
use crate::hsi::{self, normalize, GroundTruthMask, HsiCube, SceneSpec};
use crate::nn::{save_checkpoint, EncoderPath, RsalAutoencoder};
use crate::segmentation::{build_repository, segment_regions, AttributeRepository, RegionMap};
use crate::training::{train, LossReport, TrainConfig};

/// Segmentations with fewer regions than this are refused.
pub const MIN_REGIONS: usize = 4;

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("segment: only {n_regions} regions produced, at least {MIN_REGIONS} required")]
    DegenerateSegmentation { n_regions: usize },
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: BoxError,
    },
}

/// Tags an error with the stage that produced it.
pub fn stage<E: Into<BoxError>>(name: &'static str) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::Stage {
        stage: name,
        source: e.into(),
    }
}

/// Every tunable of a run, as one flat key/value table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    // scene
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub n_endmembers: usize,
    pub n_anomalies: usize,
    pub anomaly_fraction: f64,
    pub noise_sigma: f64,
    // inputs; a synthetic scene is generated when `cube` is unset
    pub cube: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub evaluate: bool,
    // segmentation
    pub psi: f64,
    pub compactness: f64,
    pub slic_iters: usize,
    // training
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta_max: f64,
    pub eta: f64,
    pub norm_k: f64,
    pub hidden: usize,
    pub state_dim: usize,
    // detection
    pub full_covariance: bool,
    pub encoder: EncoderPath,
    /// Pixel-sequence chunk length for the detail map; 0 feeds all pixels at once.
    pub chunk: usize,
    pub threshold: Option<f64>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let scene = SceneSpec::default();
        let train = TrainConfig::default();
        Self {
            seed: 42,
            height: scene.height,
            width: scene.width,
            bands: scene.bands,
            n_endmembers: scene.n_endmembers,
            n_anomalies: scene.n_anomalies,
            anomaly_fraction: scene.anomaly_fraction,
            noise_sigma: scene.noise_sigma,
            cube: None,
            mask: None,
            evaluate: true,
            psi: train.psi,
            compactness: 0.1,
            slic_iters: 10,
            epochs: train.epochs,
            lr: train.lr,
            weight_decay: train.weight_decay,
            beta_max: train.beta_max,
            eta: train.eta,
            norm_k: train.norm_k,
            hidden: train.hidden,
            state_dim: train.state_dim,
            full_covariance: false,
            encoder: EncoderPath::Original,
            chunk: 0,
            threshold: None,
            out: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plain config")
    }

    pub fn scene_spec(&self) -> SceneSpec {
        SceneSpec {
            height: self.height,
            width: self.width,
            bands: self.bands,
            n_endmembers: self.n_endmembers,
            n_anomalies: self.n_anomalies,
            anomaly_fraction: self.anomaly_fraction,
            noise_sigma: self.noise_sigma,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            weight_decay: self.weight_decay,
            psi: self.psi,
            beta_max: self.beta_max,
            eta: self.eta,
            norm_k: self.norm_k,
            hidden: self.hidden,
            state_dim: self.state_dim,
            seed: self.seed,
        }
    }

    pub fn detect_options(&self) -> DetectOptions {
        DetectOptions {
            full_covariance: self.full_covariance,
            encoder: Some(self.encoder),
            chunk: (self.chunk > 0).then_some(self.chunk),
        }
    }

    /// `ceil(H * W / psi)`
    pub fn region_target(&self, n_pixels: usize) -> usize {
        ((n_pixels as f64 / self.psi).ceil() as usize).clamp(1, n_pixels)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.train_config()
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.cube.is_none() {
            self.scene_spec()
                .validate()
                .map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        if !(self.compactness >= 0.0) || self.slic_iters == 0 {
            return Err(PipelineError::Config("compactness must be >= 0 and slic_iters > 0".into()));
        }
        Ok(())
    }
}

/// Loads the configured cube (and mask, when evaluating) or synthesizes a
/// scene. The cube is returned as stored, before normalization.
pub fn load_inputs(cfg: &RunConfig) -> Result<(HsiCube, Option<GroundTruthMask>), PipelineError> {
    match &cfg.cube {
        Some(path) => {
            let cube = hsi::load_cube(path).map_err(stage("load"))?;
            let mask = match (&cfg.mask, cfg.evaluate) {
                (Some(m), _) => Some(hsi::load_mask(m).map_err(stage("load"))?),
                (None, true) => {
                    return Err(PipelineError::Config(
                        "evaluation requested but no mask path configured".into(),
                    ))
                }
                (None, false) => None,
            };
            if let Some(m) = &mask {
                if !m.matches(&cube) {
                    return Err(PipelineError::Config("mask dimensions differ from the cube".into()));
                }
            }
            Ok((cube, mask))
        }
        None => {
            let (cube, mask) = hsi::synth_scene(&cfg.scene_spec()).map_err(stage("synth"))?;
            Ok((cube, cfg.evaluate.then_some(mask)))
        }
    }
}

pub fn segment(cube: &HsiCube, cfg: &RunConfig) -> Result<RegionMap, PipelineError> {
    let target = cfg.region_target(cube.n_pixels());
    let map = segment_regions(cube, target, cfg.compactness, cfg.slic_iters).map_err(stage("segment"))?;
    if map.n_regions() < MIN_REGIONS {
        return Err(PipelineError::DegenerateSegmentation {
            n_regions: map.n_regions(),
        });
    }
    Ok(map)
}

/// One region per pixel: trains on every pixel each epoch.
pub fn pixel_region_map(height: usize, width: usize) -> RegionMap {
    RegionMap::from_labels(height, width, (0..(height * width) as u32).collect()).expect("dense labels")
}

#[derive(Debug, Clone)]
pub struct Detection {
    pub holistic: Raster,
    pub detail: Raster,
    pub fused: DetectionMap,
}

pub fn detect(
    model: &RsalAutoencoder,
    cube: &HsiCube,
    repo: &AttributeRepository,
    map: &RegionMap,
    cfg: &RunConfig,
) -> Result<Detection, PipelineError> {
    let opts = cfg.detect_options();
    let holistic = holistic_map(model, repo, map, &opts).map_err(stage("detect"))?;
    let detail = detail_map(model, cube, cfg.norm_k, &opts).map_err(stage("detect"))?;
    let mut fused = fuse(&holistic, &detail).map_err(stage("detect"))?;
    fused.threshold = cfg.threshold;
    Ok(Detection {
        holistic,
        detail,
        fused,
    })
}

pub struct RunOutcome {
    /// The normalized cube every stage worked on.
    pub cube: HsiCube,
    pub region_map: RegionMap,
    pub model: RsalAutoencoder,
    pub report: LossReport,
    pub detection: Detection,
    pub roc: Option<RocCurve>,
    pub bench: BenchReport,
}

impl RunOutcome {
    pub fn auc(&self) -> Option<f64> {
        self.roc.as_ref().map(|r| r.auc)
    }
}

/// Normalize, segment, train and detect on `cube`; score against `mask`
/// if given.
pub fn run(cube: &HsiCube, mask: Option<&GroundTruthMask>, cfg: &RunConfig) -> Result<RunOutcome, PipelineError> {
    cfg.validate()?;
    let cube = normalize(cube);
    let t0 = Instant::now();
    let region_map = segment(&cube, cfg)?;
    let repo = build_repository(&cube, &region_map).map_err(stage("segment"))?;
    let (model, report) = train(&cube, &region_map, &repo, &cfg.train_config()).map_err(stage("train"))?;
    let train_seconds = t0.elapsed().as_secs_f64();
    let t0 = Instant::now();
    let detection = detect(&model, &cube, &repo, &region_map, cfg)?;
    let infer_seconds = t0.elapsed().as_secs_f64();
    let roc = mask
        .map(|m| roc_curve(&detection.fused.scores, m))
        .transpose()
        .map_err(stage("eval"))?;
    let bench = BenchReport {
        train_seconds,
        infer_seconds,
        samples_per_epoch: region_map.n_regions(),
        n_regions: region_map.n_regions(),
        n_pixels: cube.n_pixels(),
    };
    Ok(RunOutcome {
        cube,
        region_map,
        model,
        report,
        detection,
        roc,
        bench,
    })
}

/// Output file names inside the run directory.
pub mod files {
    pub const DETECTION: &str = "detection.hsc";
    pub const HOLISTIC: &str = "holistic.hsc";
    pub const DETAIL: &str = "detail.hsc";
    pub const REGIONS: &str = "regions.hsc";
    pub const REGION_ORDER: &str = "regions_order.json";
    pub const LOSS: &str = "loss.csv";
    pub const ROC: &str = "roc.csv";
    pub const BENCH: &str = "bench.json";
    pub const MODEL: &str = "model";
    pub const CONFIG: &str = "config.toml";
}

pub fn write_outputs(outcome: &RunOutcome, cfg: &RunConfig, dir: &Path) -> Result<(), PipelineError> {
    let io = stage("write");
    std::fs::create_dir_all(dir).map_err(stage("write"))?;
    let det = &outcome.detection;
    det.fused.save(dir.join(files::DETECTION)).map_err(stage("write"))?;
    for (raster, name) in [(&det.holistic, files::HOLISTIC), (&det.detail, files::DETAIL)] {
        let v: Vec<f32> = raster.values.iter().map(|&s| s as f32).collect();
        hsi::save_score_map(raster.height, raster.width, &v, dir.join(name)).map_err(stage("write"))?;
    }
    outcome
        .region_map
        .save(dir.join(files::REGIONS), dir.join(files::REGION_ORDER))
        .map_err(stage("write"))?;
    outcome.report.write_csv(dir.join(files::LOSS)).map_err(stage("write"))?;
    if let Some(roc) = &outcome.roc {
        roc.write_csv(dir.join(files::ROC)).map_err(stage("write"))?;
    }
    std::fs::write(dir.join(files::BENCH), outcome.bench.to_json() + "\n").map_err(stage("write"))?;
    std::fs::write(dir.join(files::CONFIG), cfg.to_toml()).map_err(io)?;
    save_checkpoint(&outcome.model, &dir.join(files::MODEL), checkpoint_metadata(cfg)).map_err(stage("write"))?;
    Ok(())
}

/// Training settings stored alongside a checkpoint.
pub fn checkpoint_metadata(cfg: &RunConfig) -> serde_json::Map<String, serde_json::Value> {
    serde_json::to_value(cfg.train_config())
        .ok()
        .and_then(|v| v.as_object().cloned())
        .unwrap_or_default()
}
