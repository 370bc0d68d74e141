//! Selective state-space autoencoder with hand-written reverse-mode
//! gradients.
//!
//! Everything runs in `f64`. The forward passes record the intermediates
//! needed by the matching backward passes in a [`Tape`]; the scan recurrence
//! keeps only periodic hidden-state checkpoints and recomputes segments on
//! the way back, so memory stays `O(T*D + sqrt(T)*D*N)`.

mod adamw;
mod autoencoder;
mod block;
mod checkpoint;
mod discretize;
mod params;
mod scan;

pub use adamw::{adamw_step, adamw_update, AdamWConfig, AdamWState};
pub use autoencoder::{EncoderPath, ModelConfig, RsalAutoencoder, Tape};
pub use block::{BlockTape, RsalBlock};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use discretize::discretize;
pub use params::{GradientVector, ParamLayout, TensorSpec};
pub use scan::{ssm_scan, ssm_scan_backward, ssm_scan_recorded, ScanDirection, ScanTape, SsmParams};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("step size must be positive, got {0}")]
    NonPositiveDelta(f64),
    #[error("sequence is empty")]
    EmptySequence,
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("backward called without a recorded forward pass")]
    NoTape,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub(crate) fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}
