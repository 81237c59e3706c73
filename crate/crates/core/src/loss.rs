//! Class-balanced binary cross entropy between an estimated and a binary SSM.
//!
//! `L = −Σ_ij (1−λ) S_ij log Ŝ_ij + λ (1−S_ij) log(1−Ŝ_ij)` where `λ` is the
//! positive rate of the track's ground truth. `Ŝ` is clamped to `[ε, 1−ε]`
//! before the logarithms.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::diffcore::{lit, Real};
use crate::error::{Error, Result};
use crate::ssm::{BinarySSM, SimilarityMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalize {
    /// Plain sum over all `T²` pairs.
    #[default]
    Sum,
    /// Sum divided by `T²`.
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub epsilon_clip: f64,
    pub normalize: Normalize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            epsilon_clip: 1e-6,
            normalize: Normalize::Sum,
        }
    }
}

impl LossConfig {
    pub fn mean() -> Self {
        Self {
            normalize: Normalize::Mean,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_clip > 0.0 && self.epsilon_clip < 0.5) {
            return Err(Error::Config(format!(
                "epsilon_clip must lie in (0, 0.5), got {}",
                self.epsilon_clip
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    /// Sum over all pairs.
    pub total: f64,
    /// `total / T²`.
    pub per_pair_mean: f64,
    pub lambda_used: f64,
    pub normalize: Normalize,
}

impl LossValue {
    /// The quantity that is minimised: `total` or `per_pair_mean`.
    pub fn objective(&self) -> f64 {
        match self.normalize {
            Normalize::Sum => self.total,
            Normalize::Mean => self.per_pair_mean,
        }
    }
}

fn check<F: Real>(est: &SimilarityMatrix<F>, gt: &BinarySSM, cfg: &LossConfig) -> Result<()> {
    cfg.validate()?;
    if est.len() != gt.len() {
        return Err(Error::Shape(format!(
            "estimated SSM is {0}x{0} but ground truth is {1}x{1}",
            est.len(),
            gt.len()
        )));
    }
    if gt.is_empty() {
        return Err(Error::EmptyInput("empty SSM".into()));
    }
    Ok(())
}

pub fn weighted_bce<F: Real>(est: &SimilarityMatrix<F>, gt: &BinarySSM, cfg: &LossConfig) -> Result<LossValue> {
    check(est, gt, cfg)?;
    let lambda = gt.lambda();
    let eps = cfg.epsilon_clip;
    let mut total = 0.0;
    for (&p, &s) in est.values().iter().zip(gt.values()) {
        let p = p.to_f64().expect("finite").clamp(eps, 1.0 - eps);
        total -= if s == 1 {
            (1.0 - lambda) * p.ln()
        } else {
            lambda * (1.0 - p).ln()
        };
    }
    if !total.is_finite() {
        return Err(Error::NonFinite(format!("loss is {total}")));
    }
    let pairs = (gt.len() * gt.len()) as f64;
    Ok(LossValue {
        total,
        per_pair_mean: total / pairs,
        lambda_used: lambda,
        normalize: cfg.normalize,
    })
}

/// `∂L/∂Ŝ_ij = −(1−λ) S_ij / Ŝ_ij + λ (1−S_ij) / (1−Ŝ_ij)` inside the clamp
/// interval and zero where the clamp is active; divided by `T²` for
/// [`Normalize::Mean`].
pub fn weighted_bce_grad<F: Real>(est: &SimilarityMatrix<F>, gt: &BinarySSM, cfg: &LossConfig) -> Result<Array2<F>> {
    check(est, gt, cfg)?;
    let lambda = gt.lambda();
    let eps = cfg.epsilon_clip;
    let scale = match cfg.normalize {
        Normalize::Sum => 1.0,
        Normalize::Mean => 1.0 / (gt.len() * gt.len()) as f64,
    };
    let mut grad = Array2::<F>::zeros(est.values().raw_dim());
    for ((g, &p), &s) in grad.iter_mut().zip(est.values()).zip(gt.values()) {
        let p = p.to_f64().expect("finite");
        if p < eps || p > 1.0 - eps {
            continue;
        }
        let d = if s == 1 {
            -(1.0 - lambda) / p
        } else {
            lambda / (1.0 - p)
        };
        *g = lit(d * scale);
    }
    Ok(grad)
}
