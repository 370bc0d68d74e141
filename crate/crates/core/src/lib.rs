//! Hyperspectral anomaly detection with a region-trained selective
//! state-space autoencoder.
//!
//! The pipeline has two asymmetric stages. Training runs on one
//! representative spectrum per SLIC region ([`segmentation`]), feeding the
//! regional sequence through a bidirectional selective-scan autoencoder
//! ([`nn`]) optimized with a dual-encoder consensus objective ([`training`]).
//! Detection then scores every pixel ([`detection`]) by fusing a regional
//! Mahalanobis map with a dense reconstruction-error map. [`eval`] provides
//! ROC/AUC scoring and timing, [`pipeline`] wires the stages together.

pub mod detection;
pub mod eval;
pub mod hsi;
pub mod nn;
pub mod pipeline;
pub mod segmentation;
pub mod training;

pub use hsi::{normalize, GroundTruthMask, HsiCube, HsiError};
