//! ROC/AUC scoring and stage timing.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hsi::GroundTruthMask;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("labels contain a single class")]
    SingleClassLabels,
    #[error("{scores} scores for {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    /// Pixels scoring at least this value are called anomalous.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// Threshold descending; starts at `(0, 0)` with threshold `+inf`.
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

impl RocCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,fpr,tpr\n");
        for p in &self.points {
            s += &format!("{},{},{}\n", p.threshold, p.fpr, p.tpr);
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// One vertex per distinct score; ties move both rates at once, so the
/// trapezoid area equals the Mann-Whitney statistic with ties counted half.
pub fn roc_from_labels(scores: &[f64], labels: &[bool]) -> Result<RocCurve, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClassLabels);
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]].total_cmp(&s).is_eq() {
            if labels[idx[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let prev = *points.last().unwrap();
        let p = RocPoint {
            threshold: s,
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
        };
        auc += (p.fpr - prev.fpr) * (p.tpr + prev.tpr) / 2.0;
        points.push(p);
    }
    Ok(RocCurve { points, auc })
}

pub fn roc_curve(scores: &[f64], labels: &GroundTruthMask) -> Result<RocCurve, EvalError> {
    let l: Vec<bool> = (0..labels.labels().len()).map(|p| labels.is_anomaly(p)).collect();
    roc_from_labels(scores, &l)
}

pub fn auc(scores: &[f64], labels: &GroundTruthMask) -> Result<f64, EvalError> {
    Ok(roc_curve(scores, labels)?.auc)
}

/// Sample and size counts reported by a training stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub samples_per_epoch: usize,
    pub n_regions: usize,
    pub n_pixels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub train_seconds: f64,
    pub infer_seconds: f64,
    pub samples_per_epoch: usize,
    pub n_regions: usize,
    pub n_pixels: usize,
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct")
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Median wall time of each stage over `reps` runs (at least one).
pub fn bench(reps: usize, mut train: impl FnMut() -> StageCounts, mut infer: impl FnMut()) -> BenchReport {
    let mut train_t = Vec::new();
    let mut infer_t = Vec::new();
    let mut counts = None;
    for _ in 0..reps.max(1) {
        let t0 = Instant::now();
        counts = Some(train());
        train_t.push(t0.elapsed().as_secs_f64());
        let t0 = Instant::now();
        infer();
        infer_t.push(t0.elapsed().as_secs_f64());
    }
    let c = counts.unwrap();
    BenchReport {
        train_seconds: median(train_t),
        infer_seconds: median(infer_t),
        samples_per_epoch: c.samples_per_epoch,
        n_regions: c.n_regions,
        n_pixels: c.n_pixels,
    }
}
