use serde::{Deserialize, Serialize};

/// Running mean and variance, merged batch by batch (parallel algorithm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningMeanStd {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: f64,
}

impl RunningMeanStd {
    pub fn new(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
            count: 1e-4,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Merges a batch of rows of width `dim`.
    pub fn update(&mut self, rows: &[Vec<f64>]) {
        if rows.is_empty() {
            return;
        }
        let n = rows.len() as f64;
        let dim = self.dim();
        let mut batch_mean = vec![0.0; dim];
        for r in rows {
            for (m, x) in batch_mean.iter_mut().zip(r) {
                *m += x / n;
            }
        }
        let mut batch_var = vec![0.0; dim];
        for r in rows {
            for ((v, x), m) in batch_var.iter_mut().zip(r).zip(&batch_mean) {
                *v += (x - m) * (x - m) / n;
            }
        }
        let total = self.count + n;
        for j in 0..dim {
            let delta = batch_mean[j] - self.mean[j];
            let m2 = self.var[j] * self.count
                + batch_var[j] * n
                + delta * delta * self.count * n / total;
            self.mean[j] += delta * n / total;
            self.var[j] = m2 / total;
        }
        self.count = total;
    }
}

const NORM_EPS: f64 = 1e-8;

/// Observation and reward normalization with clipping at `±clip`.
///
/// Rewards are divided by the running standard deviation of the discounted
/// return, without centering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub obs: RunningMeanStd,
    pub returns: RunningMeanStd,
    pub clip: f64,
    pub normalize_obs: bool,
    pub normalize_reward: bool,
}

impl Normalizer {
    pub fn new(obs_dim: usize, clip: f64, normalize_obs: bool, normalize_reward: bool) -> Self {
        Self {
            obs: RunningMeanStd::new(obs_dim),
            returns: RunningMeanStd::new(1),
            clip,
            normalize_obs,
            normalize_reward,
        }
    }

    pub fn observation(&self, obs: &[f64]) -> Vec<f64> {
        if !self.normalize_obs {
            return obs.to_vec();
        }
        obs.iter()
            .zip(self.obs.mean.iter().zip(&self.obs.var))
            .map(|(x, (m, v))| ((x - m) / (v + NORM_EPS).sqrt()).clamp(-self.clip, self.clip))
            .collect()
    }

    pub fn reward(&self, reward: f64) -> f64 {
        if !self.normalize_reward {
            return reward;
        }
        (reward / (self.returns.var[0] + NORM_EPS).sqrt()).clamp(-self.clip, self.clip)
    }
}
