//! Generalized state-dependent exploration.
//!
//! The exploration noise is a linear function of the policy's latent
//! features `z`: `ε(s) = θ_εᵀ z(s)`, with every entry of the
//! `(latent_dim × action_dim)` matrix `θ_ε` drawn from `N(0, σ_ij²)`. For a
//! fixed `θ_ε` the action is a deterministic function of the state; marginally
//! over `θ_ε` each action component is Gaussian with standard deviation
//! `σ̂_j = sqrt(Σ_i (σ_ij z_i)²)`.
//!
//! `θ_ε` is redrawn every `n` environment steps ([`SampleInterval::Steps`]) or
//! only when the caller asks, typically at episode start
//! ([`SampleInterval::Episodic`]).

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::gaussian::{HALF_LN_2PI, STD_FLOOR};
use crate::error::shape_err;
use crate::nn::autodiff::{Real, Tape};
use crate::nn::Matrix;
use crate::{Error, Result};

/// Map from the learnable log-parameter to the noise scale `σ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum VarianceTransform {
    #[default]
    Exp,
    Expln,
}

impl VarianceTransform {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            VarianceTransform::Exp => x.exp(),
            VarianceTransform::Expln => expln(x),
        }
    }

    /// `dσ / d(log σ)`.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            VarianceTransform::Exp => x.exp(),
            VarianceTransform::Expln => {
                if x <= 0.0 {
                    x.exp()
                } else {
                    1.0 / (x + 1.0)
                }
            }
        }
    }

    fn apply_real<T: Real>(self, x: T) -> T {
        match self {
            VarianceTransform::Exp => x.exp(),
            VarianceTransform::Expln => {
                if x.val() <= 0.0 {
                    x.exp()
                } else {
                    (x + 1.0).ln() + 1.0
                }
            }
        }
    }
}

/// `exp(x)` for `x ≤ 0`, `ln(x + 1) + 1` otherwise; grows only
/// logarithmically for positive inputs.
pub fn expln(x: f64) -> f64 {
    if x <= 0.0 {
        x.exp()
    } else {
        (x + 1.0).ln() + 1.0
    }
}

/// How often the noise matrix is redrawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleInterval {
    Steps(usize),
    Episodic,
}

impl SampleInterval {
    pub fn steps(self) -> Option<usize> {
        match self {
            SampleInterval::Steps(n) => Some(n),
            SampleInterval::Episodic => None,
        }
    }
}

impl fmt::Display for SampleInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SampleInterval::Steps(n) => write!(f, "{n}"),
            SampleInterval::Episodic => f.write_str("episodic"),
        }
    }
}

impl FromStr for SampleInterval {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("episodic") || s.eq_ignore_ascii_case("episode") {
            return Ok(SampleInterval::Episodic);
        }
        match s.parse::<usize>() {
            Ok(0) => Err(Error::InvalidArgument("gsde interval must be >= 1".into())),
            Ok(n) => Ok(SampleInterval::Steps(n)),
            Err(_) => Err(Error::InvalidArgument(format!(
                "gsde interval must be a positive integer or \"episodic\", got {s:?}"
            ))),
        }
    }
}

fn check_sigma_shape(log_sigma: &Matrix, features: &[f64], context: &'static str) -> Result<()> {
    if features.len() != log_sigma.rows() {
        return Err(shape_err(context, log_sigma.rows(), features.len()));
    }
    Ok(())
}

/// Per-dimension standard deviation `σ̂_j = sqrt(Σ_i (t(log_sigma_ij) z_i)²)`.
/// No floor is applied.
pub fn gsde_std(
    log_sigma: &Matrix,
    features: &[f64],
    transform: VarianceTransform,
) -> Result<Vec<f64>> {
    check_sigma_shape(log_sigma, features, "gsde_std")?;
    let mut var = vec![0.0; log_sigma.cols()];
    for (i, z) in features.iter().enumerate() {
        let z2 = z * z;
        for (v, ls) in var.iter_mut().zip(log_sigma.row(i)) {
            let s = transform.apply(*ls);
            *v += s * s * z2;
        }
    }
    Ok(var.into_iter().map(f64::sqrt).collect())
}

/// `μ + θ_εᵀ z`.
pub fn gsde_action(mean: &[f64], theta_eps: &Matrix, features: &[f64]) -> Result<Vec<f64>> {
    if mean.len() != theta_eps.cols() || features.len() != theta_eps.rows() {
        return Err(shape_err(
            "gsde_action",
            format!("{}x{}", features.len(), mean.len()),
            format!("{}x{}", theta_eps.rows(), theta_eps.cols()),
        ));
    }
    let mut action = mean.to_vec();
    for (i, z) in features.iter().enumerate() {
        for (a, t) in action.iter_mut().zip(theta_eps.row(i)) {
            *a += t * z;
        }
    }
    Ok(action)
}

/// Log-density of the induced Gaussian `N(μ, σ̂²)`. Each `σ̂_j` is floored
/// at [`STD_FLOOR`]; use [`std_at_floor`] to detect that case.
pub fn gsde_log_prob(action: &[f64], mean: &[f64], std: &[f64]) -> Result<f64> {
    super::gaussian_log_prob(action, mean, std)
}

/// True when any component would be clamped by the numerical floor.
pub fn std_at_floor(std: &[f64]) -> bool {
    std.iter().any(|&s| s < STD_FLOOR)
}

/// Closed-form `∂ log π(a|s) / ∂σ_ij` for the induced Gaussian:
/// `((a_j − μ_j)² − σ̂_j²) / σ̂_j³ · z_i² σ_ij / σ̂_j`.
///
/// Features are treated as constants with respect to `σ`.
pub fn grad_log_prob_sigma(
    action: &[f64],
    mean: &[f64],
    features: &[f64],
    log_sigma: &Matrix,
    transform: VarianceTransform,
) -> Result<Matrix> {
    check_sigma_shape(log_sigma, features, "grad_log_prob_sigma")?;
    if action.len() != log_sigma.cols() || mean.len() != log_sigma.cols() {
        return Err(shape_err(
            "grad_log_prob_sigma",
            log_sigma.cols(),
            format!("action {} / mean {}", action.len(), mean.len()),
        ));
    }
    let std = gsde_std(log_sigma, features, transform)?;
    let mut grad = Matrix::zeros(log_sigma.rows(), log_sigma.cols());
    for j in 0..log_sigma.cols() {
        let s = std[j].max(STD_FLOOR);
        let d = action[j] - mean[j];
        let outer = (d * d - s * s) / (s * s * s);
        for (i, z) in features.iter().enumerate() {
            let sigma_ij = transform.apply(log_sigma.get(i, j));
            grad.set(i, j, outer * z * z * sigma_ij / s);
        }
    }
    Ok(grad)
}

/// Chain rule `∂/∂ log σ_ij = ∂/∂σ_ij · dσ_ij/d log σ_ij`.
pub fn sigma_grad_to_log_sigma(
    grad_sigma: &Matrix,
    log_sigma: &Matrix,
    transform: VarianceTransform,
) -> Matrix {
    let mut out = grad_sigma.clone();
    for (g, ls) in out.data_mut().iter_mut().zip(log_sigma.data()) {
        *g *= transform.derivative(*ls);
    }
    out
}

fn log_prob_real<T: Real>(
    action: &[f64],
    mean: &[f64],
    features: &[f64],
    log_sigma: &[T],
    action_dim: usize,
    transform: VarianceTransform,
) -> T {
    let mut total: Option<T> = None;
    for j in 0..action_dim {
        let mut var: Option<T> = None;
        for (i, z) in features.iter().enumerate() {
            let s = transform.apply_real(log_sigma[i * action_dim + j]);
            let term = s.square() * (z * z);
            var = Some(match var {
                Some(v) => v + term,
                None => term,
            });
        }
        let std = var.expect("non-empty features").sqrt().max_const(STD_FLOOR);
        let d = action[j] - mean[j];
        let term = std.recip().square() * (-0.5 * d * d) - std.ln() - HALF_LN_2PI;
        total = Some(match total {
            Some(t) => t + term,
            None => term,
        });
    }
    total.expect("non-empty action")
}

/// Log-probability and its gradient with respect to `log_sigma`, computed
/// by recording [`gsde_log_prob`] on a reverse-mode tape.
pub fn gsde_log_prob_tape(
    action: &[f64],
    mean: &[f64],
    features: &[f64],
    log_sigma: &Matrix,
    transform: VarianceTransform,
) -> Result<(f64, Matrix)> {
    check_sigma_shape(log_sigma, features, "gsde_log_prob_tape")?;
    if action.len() != log_sigma.cols() || mean.len() != log_sigma.cols() {
        return Err(shape_err(
            "gsde_log_prob_tape",
            log_sigma.cols(),
            action.len(),
        ));
    }
    if features.is_empty() || action.is_empty() {
        return Err(Error::Empty("gsde_log_prob_tape"));
    }
    let tape = Tape::new();
    let vars: Vec<_> = log_sigma.data().iter().map(|&x| tape.var(x)).collect();
    let lp = log_prob_real(action, mean, features, &vars, log_sigma.cols(), transform);
    let adj = lp.backward();
    let grad = Matrix::from_vec(
        log_sigma.rows(),
        log_sigma.cols(),
        vars.iter().map(|&v| adj.wrt(v)).collect(),
    )?;
    Ok((lp.val(), grad))
}

/// gSDE exploration state: learnable `log σ` and the current noise matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GsdeDistribution {
    /// Shape `(latent_dim, action_dim)`.
    pub log_sigma: Matrix,
    theta_eps: Matrix,
    /// Standard-normal draws behind `theta_eps` (`θ_ε = σ ⊙ unit_noise`).
    unit_noise: Matrix,
    interval: SampleInterval,
    /// `None` until the first draw.
    steps_since_resample: Option<usize>,
    transform: VarianceTransform,
}

impl GsdeDistribution {
    pub fn new(
        latent_dim: usize,
        action_dim: usize,
        log_sigma_init: f64,
        interval: SampleInterval,
        transform: VarianceTransform,
    ) -> Result<Self> {
        if interval == SampleInterval::Steps(0) {
            return Err(Error::InvalidArgument("gsde interval must be >= 1".into()));
        }
        Ok(Self {
            log_sigma: Matrix::filled(latent_dim, action_dim, log_sigma_init),
            theta_eps: Matrix::zeros(latent_dim, action_dim),
            unit_noise: Matrix::zeros(latent_dim, action_dim),
            interval,
            steps_since_resample: None,
            transform,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.log_sigma.rows()
    }

    pub fn action_dim(&self) -> usize {
        self.log_sigma.cols()
    }

    pub fn interval(&self) -> SampleInterval {
        self.interval
    }

    pub fn transform(&self) -> VarianceTransform {
        self.transform
    }

    pub fn theta_eps(&self) -> &Matrix {
        &self.theta_eps
    }

    pub fn unit_noise(&self) -> &Matrix {
        &self.unit_noise
    }

    pub fn steps_since_resample(&self) -> Option<usize> {
        self.steps_since_resample
    }

    /// `σ = t(log σ)` elementwise.
    pub fn sigma(&self) -> Matrix {
        self.log_sigma.map(|x| self.transform.apply(x))
    }

    pub fn std(&self, features: &[f64]) -> Result<Vec<f64>> {
        gsde_std(&self.log_sigma, features, self.transform)
    }

    /// Draws a fresh `θ_ε ~ N(0, σ²)` and resets the step counter.
    pub fn resample<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for ((t, u), ls) in self
            .theta_eps
            .data_mut()
            .iter_mut()
            .zip(self.unit_noise.data_mut().iter_mut())
            .zip(self.log_sigma.data())
        {
            let e: f64 = rng.sample(StandardNormal);
            *u = e;
            *t = self.transform.apply(*ls) * e;
        }
        self.steps_since_resample = Some(0);
    }

    /// Whether the next environment step must start with a fresh draw.
    pub fn needs_resample(&self) -> bool {
        match (self.steps_since_resample, self.interval) {
            (None, _) => true,
            (Some(k), SampleInterval::Steps(n)) => k >= n,
            (Some(_), SampleInterval::Episodic) => false,
        }
    }

    /// Action for the current noise matrix, without touching the counter.
    pub fn action(&self, mean: &[f64], features: &[f64]) -> Result<Vec<f64>> {
        gsde_action(mean, &self.theta_eps, features)
    }

    /// One environment step: redraws `θ_ε` when due, returns `μ + θ_εᵀ z`
    /// and advances the counter.
    pub fn step_action<R: Rng + ?Sized>(
        &mut self,
        mean: &[f64],
        features: &[f64],
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        if self.needs_resample() {
            self.resample(rng);
        }
        let a = self.action(mean, features)?;
        self.steps_since_resample = self.steps_since_resample.map(|k| k + 1);
        Ok(a)
    }

    pub fn log_prob(&self, action: &[f64], mean: &[f64], features: &[f64]) -> Result<f64> {
        let std = self.std(features)?;
        gsde_log_prob(action, mean, &std)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    type TestRng = rand_chacha::ChaCha8Rng;

    #[test]
    fn std_examples() {
        let ls = Matrix::zeros(2, 3);
        let s = gsde_std(&ls, &[3.0, 4.0], VarianceTransform::Exp).unwrap();
        assert!(s.iter().all(|&x| (x - 5.0).abs() < 1e-12));

        let s = gsde_std(&ls, &[0.0, 0.0], VarianceTransform::Exp).unwrap();
        assert!(s.iter().all(|&x| x == 0.0));

        let ls = Matrix::from_rows(&[vec![-1.0, 0.5], vec![0.3, -2.0]]).unwrap();
        for transform in [VarianceTransform::Exp, VarianceTransform::Expln] {
            let s = gsde_std(&ls, &[0.0, 1.0], transform).unwrap();
            assert!((s[0] - transform.apply(0.3)).abs() < 1e-15);
            assert!((s[1] - transform.apply(-2.0)).abs() < 1e-15);
        }
        assert!(gsde_std(&ls, &[1.0], VarianceTransform::Exp).is_err());
    }

    #[test]
    fn expln_examples() {
        assert_eq!(expln(0.0), 1.0);
        assert!((expln(-1.0) - (-1f64).exp()).abs() < 1e-15);
        assert!((expln(1.0) - (2f64.ln() + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn expln_continuous_and_monotone() {
        for h in [1e-3, 1e-6, 1e-9] {
            assert!((expln(-h) - expln(h)).abs() < 3.0 * h);
        }
        let grid: Vec<f64> = (-400..=400).map(|i| i as f64 * 0.025).collect();
        for w in grid.windows(2) {
            assert!(expln(w[1]) > expln(w[0]));
        }
    }

    #[test]
    fn transform_derivative_matches_difference() {
        for t in [VarianceTransform::Exp, VarianceTransform::Expln] {
            for x in [-2.0, -0.3, 0.4, 3.0] {
                let fd = (t.apply(x + 1e-6) - t.apply(x - 1e-6)) / 2e-6;
                assert!((fd - t.derivative(x)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn zero_sigma_gives_zero_noise() {
        let mut d = GsdeDistribution::new(
            4,
            2,
            f64::NEG_INFINITY,
            SampleInterval::Steps(1),
            VarianceTransform::Exp,
        )
        .unwrap();
        d.resample(&mut TestRng::seed_from_u64(0));
        assert!(d.theta_eps().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn resample_is_deterministic_per_seed() {
        let mk = || {
            GsdeDistribution::new(3, 2, -1.0, SampleInterval::Steps(4), VarianceTransform::Exp)
                .unwrap()
        };
        let (mut a, mut b) = (mk(), mk());
        a.resample(&mut TestRng::seed_from_u64(5));
        b.resample(&mut TestRng::seed_from_u64(5));
        assert_eq!(a.theta_eps(), b.theta_eps());
        assert_eq!(a.steps_since_resample(), Some(0));
    }

    #[test]
    fn action_examples() {
        let theta = Matrix::zeros(3, 2);
        let a = gsde_action(&[0.4, -0.2], &theta, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(a, vec![0.4, -0.2]);

        let mut d = GsdeDistribution::new(
            3,
            2,
            0.0,
            SampleInterval::Steps(100),
            VarianceTransform::Exp,
        )
        .unwrap();
        let mut rng = TestRng::seed_from_u64(1);
        let z = [0.3, -1.2, 0.8];
        let a1 = d.step_action(&[0.0, 0.0], &z, &mut rng).unwrap();
        let _ = d
            .step_action(&[0.0, 0.0], &[1.0, 1.0, 1.0], &mut rng)
            .unwrap();
        let a2 = d.step_action(&[0.0, 0.0], &z, &mut rng).unwrap();
        assert_eq!(a1, a2);
        assert!(gsde_action(&[0.0], &theta, &z).is_err());
    }

    #[test]
    fn counter_triggers_resampling() {
        let mut d =
            GsdeDistribution::new(2, 1, 0.0, SampleInterval::Steps(3), VarianceTransform::Exp)
                .unwrap();
        let mut rng = TestRng::seed_from_u64(2);
        let mut draws = Vec::new();
        for _ in 0..9 {
            d.step_action(&[0.0], &[1.0, 0.5], &mut rng).unwrap();
            draws.push(d.theta_eps().clone());
        }
        for block in draws.chunks(3) {
            assert!(block.iter().all(|m| m == &block[0]));
        }
        assert_ne!(draws[0], draws[3]);
        assert_ne!(draws[3], draws[6]);
    }

    #[test]
    fn episodic_never_resamples_by_itself() {
        let mut d =
            GsdeDistribution::new(2, 1, 0.0, SampleInterval::Episodic, VarianceTransform::Exp)
                .unwrap();
        let mut rng = TestRng::seed_from_u64(2);
        d.step_action(&[0.0], &[1.0, 0.5], &mut rng).unwrap();
        let first = d.theta_eps().clone();
        for _ in 0..500 {
            d.step_action(&[0.0], &[1.0, 0.5], &mut rng).unwrap();
        }
        assert_eq!(d.theta_eps(), &first);
    }

    #[test]
    fn interval_parsing() {
        assert_eq!(
            "8".parse::<SampleInterval>().unwrap(),
            SampleInterval::Steps(8)
        );
        assert_eq!(
            "episodic".parse::<SampleInterval>().unwrap(),
            SampleInterval::Episodic
        );
        let err = "0".parse::<SampleInterval>().unwrap_err();
        assert!(err.to_string().contains("gsde interval"));
        assert!(
            GsdeDistribution::new(1, 1, 0.0, SampleInterval::Steps(0), Default::default()).is_err()
        );
    }

    #[test]
    fn log_prob_examples() {
        let lp = gsde_log_prob(&[0.1, 0.2], &[0.1, 0.2], &[1.0, 1.0]).unwrap();
        assert!((lp + 1.837_877_066_409_345_5).abs() < 1e-12);
        let mu = [0.3, -0.7];
        let l1 = gsde_log_prob(&mu, &mu, &[0.4, 1.3]).unwrap();
        let l2 = gsde_log_prob(&mu, &mu, &[0.8, 2.6]).unwrap();
        assert!((l1 - l2 - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!(std_at_floor(&[1.0, 1e-9]));
        assert!(!std_at_floor(&[1.0, 1e-3]));
    }

    #[test]
    fn gradient_at_mean_collapses() {
        let ls = Matrix::from_rows(&[vec![-1.0, 0.2], vec![0.5, -0.4], vec![0.1, 0.0]]).unwrap();
        let z = [0.7, -1.1, 2.0];
        let mu = [0.2, -0.5];
        let g = grad_log_prob_sigma(&mu, &mu, &z, &ls, VarianceTransform::Exp).unwrap();
        let std = gsde_std(&ls, &z, VarianceTransform::Exp).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let expected = -z[i] * z[i] * ls.get(i, j).exp() / (std[j] * std[j]);
                assert!((g.get(i, j) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_feature_row_has_zero_gradient() {
        let ls = Matrix::filled(3, 2, -0.5);
        let z = [0.7, 0.0, 2.0];
        let g =
            grad_log_prob_sigma(&[0.3, 0.1], &[0.0, 0.0], &z, &ls, VarianceTransform::Exp).unwrap();
        assert_eq!(g.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn tape_log_prob_matches_direct() {
        let ls = Matrix::from_rows(&[vec![-1.0, 0.2], vec![0.5, -0.4]]).unwrap();
        let z = [0.7, -1.1];
        let (lp, _) =
            gsde_log_prob_tape(&[0.5, 0.1], &[0.2, 0.3], &z, &ls, VarianceTransform::Exp).unwrap();
        let std = gsde_std(&ls, &z, VarianceTransform::Exp).unwrap();
        let direct = gsde_log_prob(&[0.5, 0.1], &[0.2, 0.3], &std).unwrap();
        assert!((lp - direct).abs() < 1e-12);
    }
}
