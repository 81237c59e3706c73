//! MADGRAD: momentumized, adaptive, dual-averaged gradient descent.
//!
//! For step `k` (from 0) with gradient `g` (weight decay already added):
//!
//! ```text
//! λ_k = lr · √(k + 1)
//! ν  += λ_k · g²
//! s  += λ_k · g
//! z   = x₀ − s / (∛ν + ε)
//! x   = momentum · x + (1 − momentum) · z
//! ```

use serde::{Deserialize, Serialize};

use crate::diffcore::{lit, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MadgradConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub eps: f64,
}

impl Default for MadgradConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            momentum: 0.9,
            weight_decay: 1e-2,
            eps: 1e-6,
        }
    }
}

impl MadgradConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight decay must be non-negative, got {}", self.weight_decay)));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

/// Accumulators of the dual-averaging update.
#[derive(Debug, Clone, PartialEq)]
pub struct MadgradState<F> {
    /// Weighted gradient sum `s`.
    pub grad_sum: Vec<F>,
    /// Weighted squared-gradient sum `ν`.
    pub grad_sum_sq: Vec<F>,
    /// Parameters at step 0.
    pub x0: Vec<F>,
    /// Steps taken so far.
    pub k: u64,
}

impl<F: Real> MadgradState<F> {
    pub fn new(params: &[F]) -> Self {
        Self {
            grad_sum: vec![F::zero(); params.len()],
            grad_sum_sq: vec![F::zero(); params.len()],
            x0: params.to_vec(),
            k: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.x0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x0.is_empty()
    }
}

/// Applies one update in place. Nothing is modified if a gradient is not finite.
pub fn madgrad_step<F: Real>(
    params: &mut [F],
    grads: &[F],
    state: &mut MadgradState<F>,
    cfg: &MadgradConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.len() {
        return Err(Error::Length(format!(
            "{} parameters, {} gradients, {} accumulator entries",
            params.len(),
            grads.len(),
            state.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!(
            "gradient entry {i} is {} at step {}",
            grads[i], state.k
        )));
    }
    let lamb: F = lit(cfg.learning_rate * ((state.k + 1) as f64).sqrt());
    let wd: F = lit(cfg.weight_decay);
    let eps: F = lit(cfg.eps);
    let ck: F = lit(1.0 - cfg.momentum);
    for i in 0..params.len() {
        let x = params[i];
        let g = grads[i] + wd * x;
        state.grad_sum_sq[i] += lamb * g * g;
        state.grad_sum[i] += lamb * g;
        let z = state.x0[i] - state.grad_sum[i] / (state.grad_sum_sq[i].cbrt() + eps);
        // x + ck·(z − x) equals momentum·x + ck·z and keeps x unchanged when z = x
        params[i] = x + ck * (z - x);
    }
    state.k += 1;
    Ok(())
}
