//! Adam optimiser with bias correction, applied tensor by tensor.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 9.9e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second-moment buffers for a fixed list of parameter tensors.
#[derive(Debug, Clone)]
pub struct AdamState {
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(tensor_sizes: &[usize]) -> Self {
        Self {
            step: 0,
            m: tensor_sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: tensor_sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Starts a new optimiser step; call once before updating the tensors of
    /// that step with [`AdamState::update`].
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Applies the Adam update to tensor `idx` in place:
    ///
    /// ```text
    /// m ← β₁m + (1−β₁)g        v ← β₂v + (1−β₂)g²
    /// p ← p − lr · m̂ / (√v̂ + ε)   with m̂ = m/(1−β₁ᵗ), v̂ = v/(1−β₂ᵗ)
    /// ```
    pub fn update(&mut self, idx: usize, cfg: &AdamConfig, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len());
        assert!(self.step > 0, "begin_step before update");
        let m = &mut self.m[idx];
        let v = &mut self.v[idx];
        assert_eq!(m.len(), params.len(), "tensor {idx} size changed");
        let bc1 = 1.0 - cfg.beta1.powi(self.step as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}

/// One optimiser step over a single parameter vector; convenience wrapper
/// for code that does not manage multiple tensors.
pub fn adam_step(state: &mut AdamState, cfg: &AdamConfig, params: &mut [f64], grads: &[f64]) {
    state.begin_step();
    state.update(0, cfg, params, grads);
}
