use serde::{Deserialize, Serialize};

use super::autoencoder::RsalAutoencoder;
use super::params::GradientVector;
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub config: AdamWConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamWState {
    pub fn new(len: usize, config: AdamWConfig) -> Self {
        Self {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One decoupled-weight-decay Adam update of a flat parameter slice.
pub fn adamw_update(params: &mut [f64], grad: &[f64], state: &mut AdamWState) -> Result<(), NnError> {
    if params.len() != grad.len() || grad.len() != state.m.len() {
        return Err(NnError::ShapeMismatch(format!(
            "params {}, gradient {}, optimizer state {}",
            params.len(),
            grad.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let AdamWConfig {
        lr,
        beta1,
        beta2,
        eps,
        weight_decay,
    } = state.config;
    let c1 = 1.0 - beta1.powi(state.step as i32);
    let c2 = 1.0 - beta2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grad[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * weight_decay * params[i];
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

pub fn adamw_step(model: &mut RsalAutoencoder, grad: &GradientVector, state: &mut AdamWState) -> Result<(), NnError> {
    if grad.len() != model.param_count() {
        return Err(NnError::ShapeMismatch(format!(
            "model holds {} parameters, gradient has {}",
            model.param_count(),
            grad.len()
        )));
    }
    let mut flat = model.flat_params();
    adamw_update(&mut flat, grad.values(), state)?;
    let mut at = 0;
    model.params_mut(&mut |v| {
        v.copy_from_slice(&flat[at..at + v.len()]);
        at += v.len();
    });
    Ok(())
}
