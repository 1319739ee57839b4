//! Small continuous-control environments and observation wrappers.
//!
//! Both tasks have a fixed horizon and no terminal states: an episode ends
//! with `truncated = true` exactly at step `T`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::shape_err;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
}

impl StepResult {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

/// Episodic environment with a symmetric box action space.
pub trait Env: Send {
    fn observation_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Actions are valid in `[-limit, limit]` in every dimension.
    fn action_limit(&self) -> f64;
    fn horizon(&self) -> usize;
    /// Steps taken in the current episode.
    fn elapsed(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> Result<StepResult>;
}

impl<E: Env + ?Sized> Env for Box<E> {
    fn observation_dim(&self) -> usize {
        (**self).observation_dim()
    }
    fn action_dim(&self) -> usize {
        (**self).action_dim()
    }
    fn action_limit(&self) -> f64 {
        (**self).action_limit()
    }
    fn horizon(&self) -> usize {
        (**self).horizon()
    }
    fn elapsed(&self) -> usize {
        (**self).elapsed()
    }
    fn reset(&mut self, seed: u64) -> Vec<f64> {
        (**self).reset(seed)
    }
    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        (**self).step(action)
    }
}

/// Angle wrapped into `(−π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let x = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if x <= -PI {
        x + 2.0 * PI
    } else {
        x
    }
}

fn check_action(action: &[f64], dim: usize) -> Result<()> {
    if action.len() != dim {
        return Err(shape_err("Env::step action", dim, action.len()));
    }
    if action.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFinite("action".into()));
    }
    Ok(())
}

/// Torque-limited pendulum swing-up. `θ = 0` is upright.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pendulum {
    pub theta: f64,
    pub theta_dot: f64,
    pub gravity: f64,
    pub mass: f64,
    pub length: f64,
    pub dt: f64,
    pub max_speed: f64,
    pub max_torque: f64,
    pub horizon: usize,
    t: usize,
    finished: bool,
}

impl Default for Pendulum {
    fn default() -> Self {
        Self {
            theta: PI,
            theta_dot: 0.0,
            gravity: 10.0,
            mass: 1.0,
            length: 1.0,
            dt: 0.05,
            max_speed: 8.0,
            max_torque: 2.0,
            horizon: 200,
            t: 0,
            finished: true,
        }
    }
}

impl Pendulum {
    pub fn new() -> Self {
        Self::default()
    }

    /// Places the pendulum in a given state and starts a fresh episode.
    pub fn set_state(&mut self, theta: f64, theta_dot: f64) {
        self.theta = theta;
        self.theta_dot = theta_dot;
        self.t = 0;
        self.finished = false;
    }

    pub fn observation(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }

    /// Angular acceleration for a torque `u`.
    pub fn acceleration(&self, theta: f64, u: f64) -> f64 {
        3.0 * self.gravity / (2.0 * self.length) * theta.sin()
            + 3.0 / (self.mass * self.length * self.length) * u
    }
}

impl Env for Pendulum {
    fn observation_dim(&self) -> usize {
        3
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn action_limit(&self) -> f64 {
        self.max_torque
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn elapsed(&self) -> usize {
        self.t
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = crate::Rng::seed_from_u64(seed);
        let theta = rng.random_range(-PI..PI);
        let theta_dot = rng.random_range(-1.0..1.0);
        self.set_state(theta, theta_dot);
        self.observation()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if self.finished {
            return Err(Error::EpisodeFinished);
        }
        check_action(action, 1)?;
        let u = action[0].clamp(-self.max_torque, self.max_torque);
        let wrapped = wrap_angle(self.theta);
        let reward = -(wrapped * wrapped + 0.1 * self.theta_dot * self.theta_dot + 0.001 * u * u);

        let acc = self.acceleration(self.theta, u);
        self.theta_dot = (self.theta_dot + acc * self.dt).clamp(-self.max_speed, self.max_speed);
        self.theta += self.theta_dot * self.dt;
        self.t += 1;
        let truncated = self.t >= self.horizon;
        self.finished = truncated;
        Ok(StepResult {
            observation: self.observation(),
            reward,
            terminated: false,
            truncated,
        })
    }
}

/// Force-controlled point mass on a line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoubleIntegrator {
    pub position: f64,
    pub velocity: f64,
    pub dt: f64,
    pub max_force: f64,
    pub horizon: usize,
    t: usize,
    finished: bool,
}

impl Default for DoubleIntegrator {
    fn default() -> Self {
        Self {
            position: 0.0,
            velocity: 0.0,
            dt: 0.1,
            max_force: 1.0,
            horizon: 100,
            t: 0,
            finished: true,
        }
    }
}

impl DoubleIntegrator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_state(&mut self, position: f64, velocity: f64) {
        self.position = position;
        self.velocity = velocity;
        self.t = 0;
        self.finished = false;
    }

    pub fn observation(&self) -> Vec<f64> {
        vec![self.position, self.velocity]
    }
}

impl Env for DoubleIntegrator {
    fn observation_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn action_limit(&self) -> f64 {
        self.max_force
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn elapsed(&self) -> usize {
        self.t
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = crate::Rng::seed_from_u64(seed);
        let x = rng.random_range(-1.0..1.0);
        self.set_state(x, 0.0);
        self.observation()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if self.finished {
            return Err(Error::EpisodeFinished);
        }
        check_action(action, 1)?;
        let u = action[0].clamp(-self.max_force, self.max_force);
        let (x, v) = (self.position, self.velocity);
        let reward = -(x * x + 0.1 * v * v + 0.001 * u * u);
        self.velocity += u * self.dt;
        self.position += self.velocity * self.dt;
        self.t += 1;
        let truncated = self.t >= self.horizon;
        self.finished = truncated;
        Ok(StepResult {
            observation: self.observation(),
            reward,
            terminated: false,
            truncated,
        })
    }
}

/// Exposes `[-1, 1]` actions and rescales them to the inner bounds.
#[derive(Debug, Clone)]
pub struct NormalizedAction<E> {
    pub inner: E,
}

impl<E: Env> NormalizedAction<E> {
    pub fn new(inner: E) -> Self {
        Self { inner }
    }
}

impl<E: Env> Env for NormalizedAction<E> {
    fn observation_dim(&self) -> usize {
        self.inner.observation_dim()
    }
    fn action_dim(&self) -> usize {
        self.inner.action_dim()
    }
    fn action_limit(&self) -> f64 {
        1.0
    }
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }
    fn elapsed(&self) -> usize {
        self.inner.elapsed()
    }
    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.inner.reset(seed)
    }
    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let limit = self.inner.action_limit();
        let scaled: Vec<f64> = action.iter().map(|a| a.clamp(-1.0, 1.0) * limit).collect();
        self.inner.step(&scaled)
    }
}

/// `obs` with the remaining-time fraction `(T − t) / T` appended.
pub fn wrap_time_feature(obs: &[f64], t: usize, horizon: usize) -> Result<Vec<f64>> {
    if t > horizon {
        return Err(Error::InvalidArgument(format!(
            "time step {t} beyond horizon {horizon}"
        )));
    }
    let mut out = Vec::with_capacity(obs.len() + 1);
    out.extend_from_slice(obs);
    out.push((horizon - t) as f64 / horizon as f64);
    Ok(out)
}

/// Appends the remaining fraction of the episode to every observation.
#[derive(Debug, Clone)]
pub struct TimeFeature<E> {
    pub inner: E,
}

impl<E: Env> TimeFeature<E> {
    pub fn new(inner: E) -> Self {
        Self { inner }
    }
}

impl<E: Env> Env for TimeFeature<E> {
    fn observation_dim(&self) -> usize {
        self.inner.observation_dim() + 1
    }
    fn action_dim(&self) -> usize {
        self.inner.action_dim()
    }
    fn action_limit(&self) -> f64 {
        self.inner.action_limit()
    }
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }
    fn elapsed(&self) -> usize {
        self.inner.elapsed()
    }
    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let obs = self.inner.reset(seed);
        wrap_time_feature(&obs, 0, self.inner.horizon()).expect("t = 0")
    }
    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let mut res = self.inner.step(action)?;
        res.observation =
            wrap_time_feature(&res.observation, self.inner.elapsed(), self.inner.horizon())?;
        Ok(res)
    }
}

/// Observation becomes `[current, previous, last action]`, zero-filled at reset.
#[derive(Debug, Clone)]
pub struct History<E> {
    pub inner: E,
    previous: Vec<f64>,
    current: Vec<f64>,
    last_action: Vec<f64>,
}

impl<E: Env> History<E> {
    pub fn new(inner: E) -> Self {
        let (o, a) = (inner.observation_dim(), inner.action_dim());
        Self {
            inner,
            previous: vec![0.0; o],
            current: vec![0.0; o],
            last_action: vec![0.0; a],
        }
    }

    fn stacked(&self) -> Vec<f64> {
        let mut out = self.current.clone();
        out.extend_from_slice(&self.previous);
        out.extend_from_slice(&self.last_action);
        out
    }
}

impl<E: Env> Env for History<E> {
    fn observation_dim(&self) -> usize {
        2 * self.inner.observation_dim() + self.inner.action_dim()
    }
    fn action_dim(&self) -> usize {
        self.inner.action_dim()
    }
    fn action_limit(&self) -> f64 {
        self.inner.action_limit()
    }
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }
    fn elapsed(&self) -> usize {
        self.inner.elapsed()
    }
    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.current = self.inner.reset(seed);
        self.previous.iter_mut().for_each(|x| *x = 0.0);
        self.last_action.iter_mut().for_each(|x| *x = 0.0);
        self.stacked()
    }
    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let mut res = self.inner.step(action)?;
        let limit = self.inner.action_limit();
        self.previous = std::mem::replace(&mut self.current, res.observation.clone());
        self.last_action = action.iter().map(|a| a.clamp(-limit, limit)).collect();
        res.observation = self.stacked();
        Ok(res)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EnvId {
    Pendulum,
    DoubleIntegrator,
}

impl EnvId {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvId::Pendulum => "pendulum",
            EnvId::DoubleIntegrator => "double_integrator",
        }
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "pendulum" => Ok(EnvId::Pendulum),
            "double_integrator" | "integrator" => Ok(EnvId::DoubleIntegrator),
            other => Err(Error::InvalidArgument(format!(
                "unknown environment {other:?}; expected pendulum or double_integrator"
            ))),
        }
    }
}

/// Environment construction options.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub id: EnvId,
    pub time_feature: bool,
    pub history: bool,
    /// Overrides the default horizon when set.
    pub horizon: Option<usize>,
}

impl EnvSpec {
    pub fn new(id: EnvId) -> Self {
        Self {
            id,
            time_feature: true,
            history: false,
            horizon: None,
        }
    }

    /// Builds `TimeFeature(History(NormalizedAction(base)))`, skipping the
    /// disabled wrappers. The result takes actions in `[-1, 1]`.
    pub fn build(&self) -> Box<dyn Env> {
        let base: Box<dyn Env> = match self.id {
            EnvId::Pendulum => {
                let mut env = Pendulum::new();
                if let Some(h) = self.horizon {
                    env.horizon = h;
                }
                Box::new(NormalizedAction::new(env))
            }
            EnvId::DoubleIntegrator => {
                let mut env = DoubleIntegrator::new();
                if let Some(h) = self.horizon {
                    env.horizon = h;
                }
                Box::new(NormalizedAction::new(env))
            }
        };
        let base: Box<dyn Env> = if self.history {
            Box::new(History::new(base))
        } else {
            base
        };
        if self.time_feature {
            Box::new(TimeFeature::new(base))
        } else {
            base
        }
    }
}
