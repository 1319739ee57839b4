use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::shape_err;
use crate::Result;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Lower bound applied to standard deviations before logs and divisions.
pub const STD_FLOOR: f64 = 1e-6;

pub(crate) const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Gaussian with diagonal covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    log_std: Vec<f64>,
}

impl DiagGaussian {
    /// `log_std` is clipped to `[LOG_STD_MIN, LOG_STD_MAX]`.
    pub fn new(mean: Vec<f64>, log_std: Vec<f64>) -> Result<Self> {
        if mean.len() != log_std.len() {
            return Err(shape_err("DiagGaussian::new", mean.len(), log_std.len()));
        }
        let log_std = log_std
            .into_iter()
            .map(|l| l.clamp(LOG_STD_MIN, LOG_STD_MAX))
            .collect();
        Ok(Self { mean, log_std })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| l.exp()).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.log_std)
            .map(|(m, l)| {
                let e: f64 = rng.sample(StandardNormal);
                m + l.exp() * e
            })
            .collect()
    }

    pub fn log_prob(&self, action: &[f64]) -> Result<f64> {
        gaussian_log_prob(action, &self.mean, &self.std())
    }

    pub fn entropy(&self) -> f64 {
        gaussian_entropy(&self.std())
    }
}

/// Log-density of `N(mean, diag(std²))` with `std` floored at [`STD_FLOOR`].
pub fn gaussian_log_prob(action: &[f64], mean: &[f64], std: &[f64]) -> Result<f64> {
    if action.len() != mean.len() || std.len() != mean.len() {
        return Err(shape_err(
            "gaussian_log_prob",
            mean.len(),
            format!("action {} / std {}", action.len(), std.len()),
        ));
    }
    Ok(action
        .iter()
        .zip(mean)
        .zip(std)
        .map(|((a, m), s)| {
            let s = s.max(STD_FLOOR);
            let d = a - m;
            -d * d / (2.0 * s * s) - s.ln() - HALF_LN_2PI
        })
        .sum())
}

/// Differential entropy of a diagonal Gaussian: `Σ ½ + ½ ln 2π + ln σ_j`.
pub fn gaussian_entropy(std: &[f64]) -> f64 {
    std.iter()
        .map(|s| 0.5 + HALF_LN_2PI + s.max(STD_FLOOR).ln())
        .sum()
}
