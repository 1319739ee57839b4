//! Smoothness and performance measurement.

use rand::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::envs::Env;
use crate::error::shape_err;
use crate::{Error, Result};

/// Ordered actions of one episode together with the box they live in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    actions: Vec<Vec<f64>>,
    low: Vec<f64>,
    high: Vec<f64>,
}

impl Trajectory {
    pub fn new(actions: Vec<Vec<f64>>, low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        if actions.is_empty() {
            return Err(Error::Empty("trajectory"));
        }
        if low.len() != high.len() {
            return Err(shape_err("Trajectory bounds", low.len(), high.len()));
        }
        if low.iter().zip(&high).any(|(l, h)| !(h > l)) {
            return Err(Error::InvalidArgument(
                "action bounds must satisfy low < high".into(),
            ));
        }
        for a in &actions {
            if a.len() != low.len() {
                return Err(shape_err("Trajectory action", low.len(), a.len()));
            }
            if a.iter()
                .zip(low.iter().zip(&high))
                .any(|(x, (l, h))| !(x >= l && x <= h))
            {
                return Err(Error::InvalidArgument(format!(
                    "action {a:?} outside bounds"
                )));
            }
        }
        Ok(Self { actions, low, high })
    }

    /// Bounds `[-limit, limit]` in every dimension.
    pub fn symmetric(actions: Vec<Vec<f64>>, limit: f64) -> Result<Self> {
        let dim = actions.first().map_or(0, Vec::len);
        Self::new(actions, vec![-limit; dim], vec![limit; dim])
    }

    pub fn actions(&self) -> &[Vec<f64>] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn low(&self) -> &[f64] {
        &self.low
    }

    pub fn high(&self) -> &[f64] {
        &self.high
    }
}

/// `100 · mean_{t, j} ((a_{t+1,j} − a_{t,j}) / Δa_max_j)²`.
///
/// 0 for a constant action, 100 for an action jumping between the two limits
/// at every step.
pub fn continuity_cost(traj: &Trajectory) -> Result<f64> {
    let mut acc = ContinuityAccumulator::new(traj.low.clone(), traj.high.clone());
    for a in &traj.actions {
        acc.push(a);
    }
    acc.cost().ok_or(Error::InvalidArgument(
        "continuity cost needs at least two actions".into(),
    ))
}

/// Streaming continuity cost over one action sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuityAccumulator {
    range: Vec<f64>,
    low: Vec<f64>,
    high: Vec<f64>,
    previous: Option<Vec<f64>>,
    sum: f64,
    count: usize,
}

impl ContinuityAccumulator {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Self {
        let range = low.iter().zip(&high).map(|(l, h)| h - l).collect();
        Self {
            range,
            low,
            high,
            previous: None,
            sum: 0.0,
            count: 0,
        }
    }

    pub fn symmetric(dim: usize, limit: f64) -> Self {
        Self::new(vec![-limit; dim], vec![limit; dim])
    }

    /// Adds the next action, clipped to the bounds first (the executed action).
    pub fn push(&mut self, action: &[f64]) {
        let a: Vec<f64> = action
            .iter()
            .zip(self.low.iter().zip(&self.high))
            .map(|(x, (l, h))| x.clamp(*l, *h))
            .collect();
        if let Some(prev) = &self.previous {
            for ((x, p), r) in a.iter().zip(prev).zip(&self.range) {
                let d = (x - p) / r;
                self.sum += d * d;
                self.count += 1;
            }
        }
        self.previous = Some(a);
    }

    /// Forgets the last action so the next push starts a new segment.
    pub fn break_segment(&mut self) {
        self.previous = None;
    }

    /// Number of squared differences accumulated so far.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn cost(&self) -> Option<f64> {
        (self.count > 0).then(|| 100.0 * self.sum / self.count as f64)
    }
}

/// Mean and standard error (`sample std / √n`, 0 for a single value).
pub fn mean_std_error(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Some((mean, (var / n).sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_return: f64,
    pub std_error: f64,
    /// Mean per-episode continuity cost of the deterministic actions.
    pub mean_continuity_cost: f64,
    pub episodes: usize,
    pub timestep: u64,
    pub returns: Vec<f64>,
}

/// Maps an observation to the noise-free action, in the env's action space.
pub trait DeterministicPolicy {
    fn deterministic_action(&self, observation: &[f64]) -> Result<Vec<f64>>;
}

impl<F> DeterministicPolicy for F
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    fn deterministic_action(&self, observation: &[f64]) -> Result<Vec<f64>> {
        self(observation)
    }
}

/// Runs `episodes` noise-free episodes. Episode resets are seeded from `seed`
/// alone, so repeated calls with the same policy give identical reports.
pub fn evaluate_policy<P, E>(
    policy: &P,
    env: &mut E,
    episodes: usize,
    seed: u64,
    timestep: u64,
) -> Result<EvalReport>
where
    P: DeterministicPolicy + ?Sized,
    E: Env + ?Sized,
{
    if episodes == 0 {
        return Err(Error::InvalidArgument(
            "evaluation needs at least one episode".into(),
        ));
    }
    let mut seeds = crate::Rng::seed_from_u64(seed);
    let mut returns = Vec::with_capacity(episodes);
    let mut costs = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut obs = env.reset(seeds.next_u64());
        let mut acc = ContinuityAccumulator::symmetric(env.action_dim(), env.action_limit());
        let mut total = 0.0;
        loop {
            let action = policy.deterministic_action(&obs)?;
            acc.push(&action);
            let step = env.step(&action)?;
            total += step.reward;
            obs = step.observation;
            if step.terminated || step.truncated {
                break;
            }
        }
        returns.push(total);
        if let Some(c) = acc.cost() {
            costs.push(c);
        }
    }
    let (mean_return, std_error) = mean_std_error(&returns).expect("episodes >= 1");
    let mean_continuity_cost = mean_std_error(&costs).map_or(0.0, |(m, _)| m);
    Ok(EvalReport {
        mean_return,
        std_error,
        mean_continuity_cost,
        episodes,
        timestep,
        returns,
    })
}

/// Final outcome of one training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub final_return: f64,
    /// Mean train-time continuity cost over the run's episodes.
    pub train_continuity_cost: f64,
}

/// Runs sharing one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunGroup {
    pub label: String,
    pub interval: String,
    pub runs: Vec<RunSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub label: String,
    pub interval: String,
    pub mean_return: f64,
    pub se_return: f64,
    pub mean_ctrain: f64,
    pub se_ctrain: f64,
    pub n_seeds: usize,
    /// Return relative to the best configuration of the same task, which maps to 1.
    pub normalized_return: Option<f64>,
}

/// Mean and standard error of final return and train-time continuity cost,
/// one point per group, with returns normalized to the best group.
pub fn aggregate_pareto(groups: &[RunGroup]) -> Result<Vec<ParetoPoint>> {
    let mut points = Vec::with_capacity(groups.len());
    for g in groups {
        if g.runs.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "run group {:?} is empty",
                g.label
            )));
        }
        let returns: Vec<f64> = g.runs.iter().map(|r| r.final_return).collect();
        let costs: Vec<f64> = g.runs.iter().map(|r| r.train_continuity_cost).collect();
        let (mean_return, se_return) = mean_std_error(&returns).expect("non-empty");
        let (mean_ctrain, se_ctrain) = mean_std_error(&costs).expect("non-empty");
        points.push(ParetoPoint {
            label: g.label.clone(),
            interval: g.interval.clone(),
            mean_return,
            se_return,
            mean_ctrain,
            se_ctrain,
            n_seeds: g.runs.len(),
            normalized_return: None,
        });
    }
    normalize_returns(&mut points);
    Ok(points)
}

/// Scores every point against the best mean return: `mean / best` when the
/// best is positive, `best / mean` when it is negative. Either way the best
/// point maps to 1 and worse points fall below it.
pub fn normalize_returns(points: &mut [ParetoPoint]) {
    let best = points
        .iter()
        .map(|p| p.mean_return)
        .fold(f64::NEG_INFINITY, f64::max);
    for p in points.iter_mut() {
        p.normalized_return = if best > 0.0 {
            Some(p.mean_return / best)
        } else if best < 0.0 {
            Some(best / p.mean_return)
        } else {
            None
        };
    }
}
