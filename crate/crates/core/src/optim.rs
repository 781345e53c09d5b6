//! Adam / AdamW moment state and global-norm gradient clipping.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay (AdamW). Zero gives plain Adam.
    pub weight_decay: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// First and second moments for one parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len] }
    }

    /// Updates the moments with `grad` and writes the parameter delta for step
    /// `t` (1-based) into `delta`. The caller adds `delta` to the parameters.
    pub fn delta(&mut self, p: &AdamParams, lr: f64, t: u64, params: &[f64], grad: &[f64], delta: &mut [f64]) {
        let bc1 = 1.0 - libm::pow(p.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(p.beta2, t as f64);
        for i in 0..grad.len() {
            let g = grad[i];
            self.m[i] = p.beta1 * self.m[i] + (1.0 - p.beta1) * g;
            self.v[i] = p.beta2 * self.v[i] + (1.0 - p.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            delta[i] = -lr * (m_hat / (libm::sqrt(v_hat) + p.eps) + p.weight_decay * params[i]);
        }
    }
}

/// Rescales all gradient tensors so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [&mut [f64]], max_norm: f64) -> f64 {
    let total: f64 = grads.iter().map(|g| g.iter().map(|v| v * v).sum::<f64>()).sum();
    let norm = libm::sqrt(total);
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

/// Learning rate at `step` (0-based) of a cosine schedule from `base` to 0 over `total` steps.
pub fn cosine_annealed(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    0.5 * base * (1.0 + libm::cos(core::f64::consts::PI * step as f64 / total as f64))
}
