use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::gaussian::{gaussian_log_prob, STD_FLOOR};
use crate::Result;

/// Added inside `ln(1 − tanh²(u) + ε)` so the correction stays finite.
pub const SQUASH_EPS: f64 = 1e-6;

/// A Gaussian sample pushed through `tanh`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquashedSample {
    pub pre_squash: Vec<f64>,
    pub action: Vec<f64>,
    pub log_prob: f64,
}

/// `Σ_j ln(1 − tanh(u_j)² + ε)` with ε = [`SQUASH_EPS`], the log-Jacobian
/// of the squashing.
pub fn squash_log_det(u: &[f64]) -> f64 {
    squash_log_det_eps(u, SQUASH_EPS)
}

/// [`squash_log_det`] with an explicit ε (`0.0` gives the exact Jacobian).
pub fn squash_log_det_eps(u: &[f64], eps: f64) -> f64 {
    u.iter()
        .map(|x| {
            let t = x.tanh();
            (1.0 - t * t + eps).ln()
        })
        .sum()
}

/// `d/du ln(1 − tanh(u)² + ε)`.
pub fn squash_log_det_derivative(u: f64) -> f64 {
    let t = u.tanh();
    let one_minus = 1.0 - t * t;
    -2.0 * t * one_minus / (one_minus + SQUASH_EPS)
}

/// Applies `a = tanh(u)` and the change-of-variables correction to a
/// Gaussian log-density of `u`.
pub fn squash_correct(u: &[f64], gaussian_logp: f64) -> SquashedSample {
    SquashedSample {
        pre_squash: u.to_vec(),
        action: u.iter().map(|x| x.tanh()).collect(),
        log_prob: gaussian_logp - squash_log_det(u),
    }
}

/// Monte-Carlo entropy of `tanh(N(mean, std²))`: `−mean(log π)` over
/// `samples` draws.
pub fn squashed_entropy_estimate<R: Rng + ?Sized>(
    mean: &[f64],
    std: &[f64],
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    if samples == 0 {
        return Err(crate::Error::Empty("squashed_entropy_estimate samples"));
    }
    let mut total = 0.0;
    let mut u = vec![0.0; mean.len()];
    for _ in 0..samples {
        for ((ui, m), s) in u.iter_mut().zip(mean).zip(std) {
            let e: f64 = rng.sample(StandardNormal);
            *ui = m + s.max(STD_FLOOR) * e;
        }
        let lp = gaussian_log_prob(&u, mean, std)?;
        total += squash_correct(&u, lp).log_prob;
    }
    Ok(-total / samples as f64)
}
