//! Stochastic policy distributions.

mod gaussian;
mod gsde;
mod squash;

pub use gaussian::{
    gaussian_entropy, gaussian_log_prob, DiagGaussian, LOG_STD_MAX, LOG_STD_MIN, STD_FLOOR,
};
pub use gsde::{
    expln, grad_log_prob_sigma, gsde_action, gsde_log_prob, gsde_log_prob_tape, gsde_std,
    sigma_grad_to_log_sigma, std_at_floor, GsdeDistribution, SampleInterval, VarianceTransform,
};
pub use squash::{
    squash_correct, squash_log_det, squash_log_det_derivative, squash_log_det_eps,
    squashed_entropy_estimate, SquashedSample, SQUASH_EPS,
};

/// Entropy of the unsquashed induced Gaussian for a given `σ̂`.
pub fn entropy_estimate(std: &[f64]) -> f64 {
    gaussian_entropy(std)
}
