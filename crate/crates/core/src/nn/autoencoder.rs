//! Two encoders sharing one decoder.

use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::block::{BlockTape, RsalBlock};
use super::params::{GradientVector, ParamLayout, Parameters};
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderPath {
    /// `D(E(x))`
    Original,
    /// `D(Ê(x))`
    Masked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub bands: usize,
    pub hidden: usize,
    pub state_dim: usize,
}

impl ModelConfig {
    pub fn new(bands: usize) -> Self {
        Self {
            bands,
            hidden: 256,
            state_dim: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RsalAutoencoder {
    config: ModelConfig,
    pub encoder: RsalBlock,
    pub masked_encoder: RsalBlock,
    pub decoder: RsalBlock,
    initialized: bool,
    layout: Arc<ParamLayout>,
}

/// Record of one forward pass, consumed by [`RsalAutoencoder::backward`].
#[derive(Debug, Clone, Default)]
pub struct Tape {
    inner: Option<(EncoderPath, BlockTape, BlockTape)>,
}

impl Tape {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.is_none()
    }
}

impl RsalAutoencoder {
    fn assemble(config: ModelConfig, encoder: RsalBlock, masked_encoder: RsalBlock, decoder: RsalBlock, initialized: bool) -> Self {
        let mut model = Self {
            config,
            encoder,
            masked_encoder,
            decoder,
            initialized,
            layout: Arc::default(),
        };
        model.layout = Arc::new(model.layout());
        model
    }

    /// Parameters allocated but never set; detection refuses such a model.
    pub fn uninitialized(config: ModelConfig) -> Self {
        let mut m = Self::zeros(config);
        m.initialized = false;
        m
    }

    /// Every parameter exactly zero.
    pub fn zeros(config: ModelConfig) -> Self {
        let ModelConfig { bands, hidden, state_dim } = config;
        Self::assemble(
            config,
            RsalBlock::zeros(bands, hidden, hidden, state_dim),
            RsalBlock::zeros(bands, hidden, hidden, state_dim),
            RsalBlock::zeros(hidden, hidden, bands, state_dim),
            true,
        )
    }

    pub fn init(config: ModelConfig, seed: u64) -> Self {
        let ModelConfig { bands, hidden, state_dim } = config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = RsalBlock::init(bands, hidden, hidden, state_dim, &mut rng);
        let masked_encoder = RsalBlock::init(bands, hidden, hidden, state_dim, &mut rng);
        let decoder = RsalBlock::init(hidden, hidden, bands, state_dim, &mut rng);
        Self::assemble(config, encoder, masked_encoder, decoder, true)
    }

    pub fn config(&self) -> ModelConfig {
        self.config
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub fn param_layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.total_len()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.flatten()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<(), NnError> {
        if flat.len() != self.param_count() {
            return Err(NnError::ShapeMismatch(format!(
                "model holds {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        self.assign_flat(flat);
        self.initialized = true;
        Ok(())
    }

    pub(crate) fn params_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.visit_mut(f)
    }

    fn encoder_for(&self, path: EncoderPath) -> &RsalBlock {
        match path {
            EncoderPath::Original => &self.encoder,
            EncoderPath::Masked => &self.masked_encoder,
        }
    }

    fn check(&self, seq: &ArrayView2<f64>) -> Result<(), NnError> {
        if seq.ncols() != self.config.bands {
            return Err(NnError::DimMismatch(format!(
                "model expects {} bands, got {}",
                self.config.bands,
                seq.ncols()
            )));
        }
        Ok(())
    }

    /// Reconstructs a `T x C` sequence.
    pub fn forward(&self, seq: ArrayView2<f64>, path: EncoderPath) -> Result<Array2<f64>, NnError> {
        self.check(&seq)?;
        let code = self.encoder_for(path).forward(seq)?;
        self.decoder.forward(code.view())
    }

    pub fn forward_recorded(&self, seq: ArrayView2<f64>, path: EncoderPath) -> Result<(Array2<f64>, Tape), NnError> {
        self.check(&seq)?;
        let (code, enc) = self.encoder_for(path).forward_recorded(seq)?;
        let (out, dec) = self.decoder.forward_recorded(code.view())?;
        Ok((
            out,
            Tape {
                inner: Some((path, enc, dec)),
            },
        ))
    }

    /// Gradient of a scalar loss given `d_out = dL/d(reconstruction)`.
    /// Parameters off the recorded path get exact zeros.
    pub fn backward(&self, tape: &Tape, d_out: ArrayView2<f64>) -> Result<GradientVector, NnError> {
        let (path, enc_tape, dec_tape) = tape.inner.as_ref().ok_or(NnError::NoTape)?;
        let (g_dec, d_code) = self.decoder.backward(dec_tape, d_out)?;
        let (g_enc, _) = self.encoder_for(*path).backward(enc_tape, d_code.view())?;
        let zero = |b: &RsalBlock| RsalBlock::zeros(b.in_dim(), b.inner_dim(), b.out_dim(), b.state_dim());
        let (e, m) = match path {
            EncoderPath::Original => (g_enc, zero(&self.masked_encoder)),
            EncoderPath::Masked => (zero(&self.encoder), g_enc),
        };
        let grads = Self::assemble(self.config, e, m, g_dec, true);
        GradientVector::from_values(self.layout.clone(), grads.flatten())
    }
}

impl Parameters for RsalAutoencoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &[f64])) {
        self.encoder.visit(&format!("{prefix}encoder."), f);
        self.masked_encoder.visit(&format!("{prefix}masked_encoder."), f);
        self.decoder.visit(&format!("{prefix}decoder."), f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.encoder.visit_mut(f);
        self.masked_encoder.visit_mut(f);
        self.decoder.visit_mut(f);
    }
}
