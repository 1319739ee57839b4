//! Exploration baselines: Ornstein-Uhlenbeck action noise and adaptive
//! parameter-space noise.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::nn::{Matrix, Mlp};
use crate::{Error, Result};

/// Exploration strategy used while collecting experience.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NoiseKind {
    /// Execute the deterministic action.
    None,
    /// Independent Gaussian noise at every step.
    Gaussian,
    /// Ornstein-Uhlenbeck process added to the deterministic action.
    Ou,
    /// Adaptive Gaussian perturbation of the actor weights, fixed per episode.
    Param,
    /// Generalized state-dependent exploration.
    Gsde,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 5] = [
        NoiseKind::None,
        NoiseKind::Gaussian,
        NoiseKind::Ou,
        NoiseKind::Param,
        NoiseKind::Gsde,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NoiseKind::None => "none",
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::Ou => "ou",
            NoiseKind::Param => "param",
            NoiseKind::Gsde => "gsde",
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NoiseKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown noise type {s:?}; expected one of none, gaussian, ou, param, gsde"
                ))
            })
    }
}

/// Discretized Ornstein-Uhlenbeck process with zero long-run mean:
/// `x ← (1 − θ dt) x + σ sqrt(dt) N(0, I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuProcess {
    state: Vec<f64>,
    pub theta: f64,
    pub sigma: f64,
    pub dt: f64,
}

impl OuProcess {
    pub fn new(action_dim: usize, sigma: f64, theta: f64, dt: f64) -> Self {
        Self {
            state: vec![0.0; action_dim],
            theta,
            sigma,
            dt,
        }
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn set_state(&mut self, state: Vec<f64>) {
        self.state = state;
    }

    pub fn reset(&mut self) {
        self.state.iter_mut().for_each(|x| *x = 0.0);
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> &[f64] {
        let scale = self.sigma * self.dt.sqrt();
        let decay = 1.0 - self.theta * self.dt;
        for x in &mut self.state {
            let e: f64 = rng.sample(StandardNormal);
            *x = decay * *x + scale * e;
        }
        &self.state
    }
}

/// Adaptive scale of parameter-space noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamNoise {
    pub stddev: f64,
    pub adaptation_factor: f64,
    pub target_distance: f64,
}

impl ParamNoise {
    pub fn new(initial_stddev: f64, target_distance: f64, adaptation_factor: f64) -> Self {
        Self {
            stddev: initial_stddev,
            adaptation_factor,
            target_distance,
        }
    }

    /// Grows the scale when the measured action distance is below target,
    /// shrinks it otherwise.
    pub fn adapt(&mut self, measured_distance: f64) -> f64 {
        if measured_distance < self.target_distance {
            self.stddev *= self.adaptation_factor;
        } else {
            self.stddev /= self.adaptation_factor;
        }
        self.stddev
    }
}

/// Copy of `net` with independent `N(0, σ_p²)` noise on every weight and bias.
pub fn perturb_params<R: Rng + ?Sized>(net: &Mlp, stddev: f64, rng: &mut R) -> Mlp {
    let mut out = net.clone();
    if stddev == 0.0 {
        return out;
    }
    for group in out.param_slices_mut() {
        for p in group.iter_mut() {
            let e: f64 = rng.sample(StandardNormal);
            *p += stddev * e;
        }
    }
    out
}

/// Root-mean-square difference between the outputs of two networks over a
/// batch of states.
pub fn action_distance(net: &Mlp, perturbed: &Mlp, states: &Matrix) -> Result<f64> {
    if states.rows() == 0 {
        return Err(Error::Empty("action_distance states"));
    }
    rms_distance(&net.predict(states)?, &perturbed.predict(states)?)
}

/// `sqrt(mean((a − b)²))` over every entry of two equally shaped matrices.
pub fn rms_distance(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(crate::error::shape_err(
            "rms_distance",
            format!("{:?}", a.shape()),
            format!("{:?}", b.shape()),
        ));
    }
    if a.data().is_empty() {
        return Err(Error::Empty("rms_distance"));
    }
    let sq: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok((sq / a.data().len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Layer};
    use rand::SeedableRng;

    type TestRng = rand_chacha::ChaCha8Rng;

    #[test]
    fn ou_degenerate_cases() {
        let mut rng = TestRng::seed_from_u64(0);
        let mut ou = OuProcess::new(2, 0.0, 0.0, 1.0);
        ou.set_state(vec![0.3, -0.2]);
        for _ in 0..10 {
            ou.step(&mut rng);
        }
        assert_eq!(ou.state(), &[0.3, -0.2]);

        let mut ou = OuProcess::new(1, 0.0, 0.15, 0.5);
        ou.set_state(vec![2.0]);
        let mut expected = 2.0;
        for _ in 0..25 {
            ou.step(&mut rng);
            expected *= 1.0 - 0.15 * 0.5;
        }
        assert_eq!(ou.state()[0], expected);

        ou.reset();
        assert_eq!(ou.state(), &[0.0]);
    }

    #[test]
    fn adaptation_rule() {
        let mut pn = ParamNoise::new(0.2, 0.2, 1.01);
        assert!((pn.adapt(0.0) - 0.2 * 1.01).abs() < 1e-15);
        let mut pn = ParamNoise::new(0.2, 0.2, 1.01);
        assert!((pn.adapt(1.0) - 0.2 / 1.01).abs() < 1e-15);

        let mut pn = ParamNoise::new(0.37, 0.2, 1.01);
        for i in 0..200 {
            pn.adapt(if i % 2 == 0 { 0.0 } else { 1.0 });
        }
        assert!((pn.stddev - 0.37).abs() < 1e-12);
    }

    fn constant_net(value: f64) -> Mlp {
        let layer = Layer::new(Matrix::zeros(1, 1), vec![value], Activation::Identity).unwrap();
        Mlp::from_layers(vec![layer]).unwrap()
    }

    #[test]
    fn distance_examples() {
        let states = Matrix::row_vector(&[0.0]);
        let (a, b) = (constant_net(0.5), constant_net(0.9));
        assert!((action_distance(&a, &b, &states).unwrap() - 0.4).abs() < 1e-12);
        assert_eq!(
            action_distance(&a, &b, &states).unwrap(),
            action_distance(&b, &a, &states).unwrap()
        );
        assert_eq!(action_distance(&a, &a, &states).unwrap(), 0.0);
        assert!(action_distance(&a, &b, &Matrix::zeros(0, 1)).is_err());
    }

    #[test]
    fn perturbation_basics() {
        let mut rng = TestRng::seed_from_u64(3);
        let net = Mlp::new(3, &[4], 2, Activation::Relu, &mut rng);
        assert_eq!(perturb_params(&net, 0.0, &mut rng), net);

        let p1 = perturb_params(&net, 0.1, &mut TestRng::seed_from_u64(9));
        let p2 = perturb_params(&net, 0.1, &mut TestRng::seed_from_u64(9));
        assert_eq!(p1, p2);
        assert_ne!(p1, net);
    }

    #[test]
    fn noise_kind_round_trip() {
        for k in NoiseKind::ALL {
            assert_eq!(k.to_string().parse::<NoiseKind>().unwrap(), k);
        }
        assert!("pink".parse::<NoiseKind>().is_err());
    }
}
