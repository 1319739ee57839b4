use rand::Rng;

use crate::error::shape_err;
use crate::nn::Matrix;
use crate::{Error, Result};

/// Minibatch of transitions, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub observations: Matrix,
    pub actions: Matrix,
    pub rewards: Vec<f64>,
    pub next_observations: Matrix,
    /// 1.0 for true terminal transitions, 0.0 otherwise (time-outs included).
    pub dones: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Fixed-capacity circular store of `(s, a, r, s', done)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_dim: usize,
    action_dim: usize,
    observations: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_observations: Vec<f64>,
    dones: Vec<f64>,
    cursor: usize,
    len: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize, action_dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument(
                "replay capacity must be positive".into(),
            ));
        }
        Ok(Self {
            capacity,
            obs_dim,
            action_dim,
            observations: vec![0.0; capacity * obs_dim],
            actions: vec![0.0; capacity * action_dim],
            rewards: vec![0.0; capacity],
            next_observations: vec![0.0; capacity * obs_dim],
            dones: vec![0.0; capacity],
            cursor: 0,
            len: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn push(
        &mut self,
        obs: &[f64],
        action: &[f64],
        reward: f64,
        next_obs: &[f64],
        done: bool,
    ) -> Result<()> {
        if obs.len() != self.obs_dim || next_obs.len() != self.obs_dim {
            return Err(shape_err(
                "ReplayBuffer::push observation",
                self.obs_dim,
                obs.len(),
            ));
        }
        if action.len() != self.action_dim {
            return Err(shape_err(
                "ReplayBuffer::push action",
                self.action_dim,
                action.len(),
            ));
        }
        let (o, a, k) = (self.obs_dim, self.action_dim, self.cursor);
        self.observations[k * o..(k + 1) * o].copy_from_slice(obs);
        self.next_observations[k * o..(k + 1) * o].copy_from_slice(next_obs);
        self.actions[k * a..(k + 1) * a].copy_from_slice(action);
        self.rewards[k] = reward;
        self.dones[k] = if done { 1.0 } else { 0.0 };
        self.cursor = (self.cursor + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
        Ok(())
    }

    /// Transition at storage slot `index` (not insertion order once wrapped).
    pub fn get(&self, index: usize) -> Option<(&[f64], &[f64], f64, &[f64], f64)> {
        if index >= self.len {
            return None;
        }
        let (o, a) = (self.obs_dim, self.action_dim);
        Some((
            &self.observations[index * o..(index + 1) * o],
            &self.actions[index * a..(index + 1) * a],
            self.rewards[index],
            &self.next_observations[index * o..(index + 1) * o],
            self.dones[index],
        ))
    }

    /// Gathers the given slots into a batch.
    pub fn gather(&self, indices: &[usize]) -> Result<Batch> {
        let (o, a) = (self.obs_dim, self.action_dim);
        let n = indices.len();
        let mut obs = Vec::with_capacity(n * o);
        let mut next = Vec::with_capacity(n * o);
        let mut act = Vec::with_capacity(n * a);
        let mut rewards = Vec::with_capacity(n);
        let mut dones = Vec::with_capacity(n);
        for &i in indices {
            let (s, ac, r, s2, d) = self
                .get(i)
                .ok_or_else(|| Error::InvalidArgument(format!("replay index {i} out of range")))?;
            obs.extend_from_slice(s);
            act.extend_from_slice(ac);
            next.extend_from_slice(s2);
            rewards.push(r);
            dones.push(d);
        }
        Ok(Batch {
            observations: Matrix::from_vec(n, o, obs)?,
            actions: Matrix::from_vec(n, a, act)?,
            rewards,
            next_observations: Matrix::from_vec(n, o, next)?,
            dones,
        })
    }

    /// Uniform sample with replacement over the filled region.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Batch> {
        if self.len == 0 {
            return Err(Error::Empty("replay buffer"));
        }
        let indices: Vec<usize> = (0..batch_size)
            .map(|_| rng.random_range(0..self.len))
            .collect();
        self.gather(&indices)
    }
}
