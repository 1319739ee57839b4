//! PPO with gSDE or state-independent Gaussian exploration.
//!
//! Every worker owns its environment, its random streams and its own gSDE
//! noise matrix, so a rollout explores with as many noise functions as there
//! are workers. Collection reads a frozen snapshot of the agent; the
//! normalization statistics are merged afterwards in worker order, which makes
//! parallel and serial collection produce the same buffer.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::normalize::Normalizer;
use super::{EvalSchedule, Exploration, LogRow, RunSettings, TrainLog};
use crate::distributions::{
    gaussian_entropy, gaussian_log_prob, GsdeDistribution, SampleInterval, VarianceTransform,
    STD_FLOOR,
};
use crate::envs::{Env, EnvSpec};
use crate::error::{diverged_at, shape_err};
use crate::metrics::{evaluate_policy, ContinuityAccumulator, DeterministicPolicy};
use crate::nn::{clip_grad_norm, Activation, AdamState, Matrix, Mlp};
use crate::seeding::{seed_streams, stream, SeedStreams};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_range: f64,
    pub n_workers: usize,
    pub n_steps: usize,
    pub n_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub vf_coef: f64,
    pub ent_coef: f64,
    pub max_grad_norm: f64,
    pub hidden: Vec<usize>,
    pub normalize_obs: bool,
    pub normalize_reward: bool,
    /// Clip applied to normalized observations and rewards.
    pub norm_clip: f64,
    pub exploration: Exploration,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.9,
            clip_range: 0.4,
            n_workers: 16,
            n_steps: 512,
            n_epochs: 20,
            batch_size: 128,
            learning_rate: 3e-5,
            vf_coef: 0.5,
            ent_coef: 0.0,
            max_grad_norm: 0.5,
            hidden: vec![64, 64],
            normalize_obs: true,
            normalize_reward: true,
            norm_clip: 10.0,
            exploration: Exploration::Gsde {
                interval: SampleInterval::Steps(4),
                log_sigma_init: -2.0,
                transform: VarianceTransform::Exp,
            },
        }
    }
}

/// Learnable exploration parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PpoNoise {
    Gsde {
        log_sigma: Matrix,
        interval: SampleInterval,
        transform: VarianceTransform,
    },
    Gaussian {
        log_std: Vec<f64>,
    },
}

impl PpoNoise {
    fn data(&self) -> &[f64] {
        match self {
            PpoNoise::Gsde { log_sigma, .. } => log_sigma.data(),
            PpoNoise::Gaussian { log_std } => log_std,
        }
    }

    fn data_mut(&mut self) -> &mut [f64] {
        match self {
            PpoNoise::Gsde { log_sigma, .. } => log_sigma.data_mut(),
            PpoNoise::Gaussian { log_std } => log_std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoAgent {
    pub config: PpoConfig,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub policy: Mlp,
    pub value: Mlp,
    pub noise: PpoNoise,
    pub optimizer: AdamState,
    pub normalizer: Normalizer,
    pub updates: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpoLosses {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

/// One minibatch of on-policy data.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoBatch {
    pub observations: Matrix,
    pub actions: Matrix,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

/// Gradients of the total PPO loss.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoGradients {
    pub policy: Vec<Vec<f64>>,
    pub value: Vec<Vec<f64>>,
    pub noise: Vec<f64>,
}

impl PpoAgent {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        action_dim: usize,
        config: PpoConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if config.n_workers == 0 {
            return Err(Error::InvalidArgument(
                "PPO needs at least one worker".into(),
            ));
        }
        if config.batch_size == 0 || config.n_steps == 0 {
            return Err(Error::InvalidArgument(
                "PPO batch size and rollout length must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&config.gamma) {
            return Err(Error::InvalidArgument(format!(
                "gamma must lie in [0, 1), got {}",
                config.gamma
            )));
        }
        let policy = Mlp::new(obs_dim, &config.hidden, action_dim, Activation::Relu, rng);
        let value = Mlp::new(obs_dim, &config.hidden, 1, Activation::Relu, rng);
        let noise = match config.exploration {
            Exploration::Gsde {
                interval,
                log_sigma_init,
                transform,
            } => {
                if interval == SampleInterval::Steps(0) {
                    return Err(Error::InvalidArgument("gsde interval must be >= 1".into()));
                }
                PpoNoise::Gsde {
                    log_sigma: Matrix::filled(policy.latent_dim(), action_dim, log_sigma_init),
                    interval,
                    transform,
                }
            }
            Exploration::Gaussian { log_std_init } => PpoNoise::Gaussian {
                log_std: vec![log_std_init; action_dim],
            },
            other => {
                return Err(Error::InvalidArgument(format!(
                    "PPO supports gaussian and gsde exploration, not {}",
                    other.kind()
                )))
            }
        };
        let mut groups = policy.param_shapes();
        groups.extend(value.param_shapes());
        groups.push(noise.data().len());
        Ok(Self {
            obs_dim,
            action_dim,
            optimizer: AdamState::new(&groups, config.learning_rate),
            normalizer: Normalizer::new(
                obs_dim,
                config.norm_clip,
                config.normalize_obs,
                config.normalize_reward,
            ),
            policy,
            value,
            noise,
            updates: 0,
            config,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.policy.is_finite()
            && self.value.is_finite()
            && self.noise.data().iter().all(|x| x.is_finite())
    }

    /// Standard deviation of every action dimension for given features.
    fn std_for(&self, latent: &[f64]) -> Result<Vec<f64>> {
        match &self.noise {
            PpoNoise::Gsde {
                log_sigma,
                transform,
                ..
            } => crate::distributions::gsde_std(log_sigma, latent, *transform),
            PpoNoise::Gaussian { log_std } => Ok(log_std.iter().map(|l| l.exp()).collect()),
        }
    }

    /// Loss values for a minibatch at the current parameters.
    pub fn ppo_loss(&self, batch: &PpoBatch) -> Result<PpoLosses> {
        Ok(self.loss_and_gradients(batch)?.0)
    }

    /// Total loss `policy + vf_coef·value − ent_coef·entropy` and its gradients.
    pub fn loss_and_gradients(&self, batch: &PpoBatch) -> Result<(PpoLosses, PpoGradients)> {
        let b = batch.observations.rows();
        if b == 0 {
            return Err(Error::Empty("PPO minibatch"));
        }
        let a = self.action_dim;
        let bf = b as f64;
        let clip = self.config.clip_range;
        let advantages = normalize_advantages(&batch.advantages);

        let fwd = self.policy.forward(&batch.observations)?;
        let z = &fwd.latent;
        let mean = &fwd.output;
        let mut std = Matrix::zeros(b, a);
        let mut std_free = vec![true; b * a];
        for r in 0..b {
            let s = self.std_for(z.row(r))?;
            for j in 0..a {
                std_free[r * a + j] = s[j] >= STD_FLOOR;
                std.set(r, j, s[j].max(STD_FLOOR));
            }
        }

        let mut policy_loss = 0.0;
        let mut entropy = 0.0;
        let mut clipped = 0usize;
        let mut weights = vec![0.0; b];
        for r in 0..b {
            let lp = gaussian_log_prob(batch.actions.row(r), mean.row(r), std.row(r))?;
            let ratio = (lp - batch.old_log_probs[r]).exp();
            if !ratio.is_finite() {
                return Err(Error::NonFinite("PPO probability ratio".into()));
            }
            let adv = advantages[r];
            let surr1 = ratio * adv;
            let surr2 = ratio.clamp(1.0 - clip, 1.0 + clip) * adv;
            policy_loss -= surr1.min(surr2) / bf;
            if surr1 <= surr2 {
                weights[r] = -surr1 / bf;
            }
            if (ratio - 1.0).abs() > clip {
                clipped += 1;
            }
            entropy += gaussian_entropy(std.row(r)) / bf;
        }

        // policy mean
        let mut upstream = Matrix::zeros(b, a);
        for r in 0..b {
            for j in 0..a {
                let s = std.get(r, j);
                let d = batch.actions.get(r, j) - mean.get(r, j);
                upstream.set(r, j, weights[r] * d / (s * s));
            }
        }
        let ent = self.config.ent_coef;
        let noise_grad = match &self.noise {
            PpoNoise::Gsde {
                log_sigma,
                transform,
                ..
            } => {
                let mut k = Matrix::zeros(b, a);
                for r in 0..b {
                    for j in 0..a {
                        if !std_free[r * a + j] {
                            continue;
                        }
                        let s = std.get(r, j);
                        let d = batch.actions.get(r, j) - mean.get(r, j);
                        let s2 = s * s;
                        k.set(r, j, weights[r] * (d * d - s2) / (s2 * s2) - ent / bf / s2);
                    }
                }
                let mut grad = z.map(|x| x * x).t_matmul(&k)?;
                for (g, ls) in grad.data_mut().iter_mut().zip(log_sigma.data()) {
                    let sigma = transform.apply(*ls);
                    *g *= sigma * transform.derivative(*ls);
                }
                grad.into_vec()
            }
            PpoNoise::Gaussian { log_std } => {
                let mut grad = vec![-ent; a];
                for r in 0..b {
                    for j in 0..a {
                        let s = log_std[j].exp();
                        let d = batch.actions.get(r, j) - mean.get(r, j);
                        grad[j] += weights[r] * (d * d / (s * s) - 1.0);
                    }
                }
                grad
            }
        };
        let policy_grads = self.policy.backward(&fwd.tape, &upstream)?;

        let vf = self.value.forward(&batch.observations)?;
        let mut value_loss = 0.0;
        let mut vup = Matrix::zeros(b, 1);
        for (r, (v, ret)) in vf.output.data().iter().zip(&batch.returns).enumerate() {
            value_loss += (v - ret) * (v - ret) / bf;
            vup.set(r, 0, self.config.vf_coef * 2.0 * (v - ret) / bf);
        }
        let value_grads = self.value.backward(&vf.tape, &vup)?;

        let losses = PpoLosses {
            policy: policy_loss,
            value: value_loss,
            entropy,
            clip_fraction: clipped as f64 / bf,
        };
        if !(policy_loss.is_finite() && value_loss.is_finite()) {
            return Err(Error::NonFinite("PPO loss".into()));
        }
        let grads = PpoGradients {
            policy: policy_grads.slices().iter().map(|s| s.to_vec()).collect(),
            value: value_grads.slices().iter().map(|s| s.to_vec()).collect(),
            noise: noise_grad,
        };
        Ok((losses, grads))
    }

    /// One clipped Adam step on a minibatch.
    pub fn train_minibatch(&mut self, batch: &PpoBatch) -> Result<PpoLosses> {
        let (losses, mut grads) = self.loss_and_gradients(batch)?;
        {
            let mut all: Vec<&mut [f64]> =
                grads.policy.iter_mut().map(|g| g.as_mut_slice()).collect();
            all.extend(grads.value.iter_mut().map(|g| g.as_mut_slice()));
            all.push(grads.noise.as_mut_slice());
            clip_grad_norm(&mut all, self.config.max_grad_norm);
        }
        let mut params = self.policy.param_slices_mut();
        params.extend(self.value.param_slices_mut());
        params.push(self.noise.data_mut());
        let mut g: Vec<&[f64]> = grads.policy.iter().map(|g| g.as_slice()).collect();
        g.extend(grads.value.iter().map(|g| g.as_slice()));
        g.push(&grads.noise);
        self.optimizer.step(&mut params, &g)?;
        self.updates += 1;
        Ok(losses)
    }

    /// `n_epochs` passes of shuffled minibatches over a full rollout.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        buffer: &RolloutBuffer,
        rng: &mut R,
    ) -> Result<Option<PpoLosses>> {
        let n = buffer.len();
        let mut indices: Vec<usize> = (0..n).collect();
        let mut last = None;
        for _ in 0..self.config.n_epochs {
            indices.shuffle(rng);
            for chunk in indices.chunks(self.config.batch_size) {
                let batch = buffer.minibatch(chunk);
                last = Some(self.train_minibatch(&batch)?);
            }
        }
        if !self.is_finite() {
            return Err(Error::NonFinite("PPO parameters".into()));
        }
        Ok(last)
    }
}

impl DeterministicPolicy for PpoAgent {
    fn deterministic_action(&self, observation: &[f64]) -> Result<Vec<f64>> {
        let obs = self.normalizer.observation(observation);
        let (_, mean) = self.policy.predict_one(&obs)?;
        Ok(mean.iter().map(|m| m.clamp(-1.0, 1.0)).collect())
    }
}

/// Advantages scaled to zero mean and unit (sample) standard deviation;
/// a single sample is left as is.
fn normalize_advantages(adv: &[f64]) -> Vec<f64> {
    if adv.len() < 2 {
        return adv.to_vec();
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let std = (adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1.0)).sqrt();
    adv.iter().map(|a| (a - mean) / (std + 1e-8)).collect()
}

/// Generalized advantage estimation. `dones[t]` marks that the episode ended
/// with step `t`; `last_value` bootstraps the step after the final one.
pub fn gae_compute(
    rewards: &[f64],
    values: &[f64],
    dones: &[f64],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(shape_err(
            "gae_compute",
            n,
            format!("values {} / dones {}", values.len(), dones.len()),
        ));
    }
    let mut advantages = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { last_value };
        let not_done = 1.0 - dones[t];
        let delta = rewards[t] + gamma * not_done * next_value - values[t];
        next_adv = delta + gamma * lambda * not_done * next_adv;
        advantages[t] = next_adv;
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((advantages, returns))
}

/// Merged rollout of every worker, worker-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBuffer {
    pub n_workers: usize,
    pub n_steps: usize,
    /// Normalized observations the policy saw.
    pub observations: Matrix,
    pub actions: Matrix,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    /// Normalized rewards, with time-out bootstrapping folded in.
    pub rewards: Vec<f64>,
    pub raw_rewards: Vec<f64>,
    pub dones: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    /// Noise matrix of each worker at the start of the rollout.
    pub initial_noise: Vec<Option<Matrix>>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    pub fn minibatch(&self, indices: &[usize]) -> PpoBatch {
        PpoBatch {
            observations: self.observations.select_rows(indices),
            actions: self.actions.select_rows(indices),
            old_log_probs: indices.iter().map(|&i| self.log_probs[i]).collect(),
            advantages: indices.iter().map(|&i| self.advantages[i]).collect(),
            returns: indices.iter().map(|&i| self.returns[i]).collect(),
        }
    }
}

/// Episode statistics gathered during a rollout, in worker order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutStats {
    pub episode_returns: Vec<f64>,
    pub episode_costs: Vec<f64>,
}

/// One environment copy with its own streams and noise matrix.
pub struct Worker {
    pub index: usize,
    env: Box<dyn Env>,
    env_rng: crate::Rng,
    noise_rng: crate::Rng,
    pub gsde: Option<GsdeDistribution>,
    obs: Vec<f64>,
    needs_reset: bool,
    episode_return: f64,
    discounted_return: f64,
    continuity: ContinuityAccumulator,
}

impl std::fmt::Debug for Worker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Worker")
            .field("index", &self.index)
            .field("obs", &self.obs)
            .finish_non_exhaustive()
    }
}

/// Data one worker hands back after a rollout.
struct WorkerRollout {
    observations: Vec<Vec<f64>>,
    raw_observations: Vec<Vec<f64>>,
    actions: Vec<Vec<f64>>,
    log_probs: Vec<f64>,
    values: Vec<f64>,
    rewards: Vec<f64>,
    dones: Vec<f64>,
    /// `V(final observation)` for steps that hit the time limit, else 0.
    timeout_values: Vec<f64>,
    last_value: f64,
    initial_noise: Option<Matrix>,
    episode_returns: Vec<f64>,
    episode_costs: Vec<f64>,
}

impl Worker {
    pub fn new(index: usize, spec: &EnvSpec, master_seed: u64, agent: &PpoAgent) -> Result<Self> {
        let env = spec.build();
        let gsde = match &agent.noise {
            PpoNoise::Gsde {
                log_sigma,
                interval,
                transform,
            } => Some(GsdeDistribution::new(
                log_sigma.rows(),
                log_sigma.cols(),
                0.0,
                *interval,
                *transform,
            )?),
            PpoNoise::Gaussian { .. } => None,
        };
        let action_dim = env.action_dim();
        Ok(Self {
            index,
            env,
            env_rng: stream(master_seed, &format!("env/worker-{index}")),
            noise_rng: stream(master_seed, &format!("noise/worker-{index}")),
            gsde,
            obs: Vec::new(),
            needs_reset: true,
            episode_return: 0.0,
            discounted_return: 0.0,
            continuity: ContinuityAccumulator::symmetric(action_dim, 1.0),
        })
    }

    fn reset(&mut self) {
        self.obs = self.env.reset(self.env_rng.next_u64());
        self.episode_return = 0.0;
        self.continuity = ContinuityAccumulator::symmetric(self.env.action_dim(), 1.0);
        self.needs_reset = false;
    }

    fn collect(&mut self, agent: &PpoAgent, n_steps: usize) -> Result<WorkerRollout> {
        if self.needs_reset {
            self.reset();
        }
        let mut initial_noise = None;
        if let (Some(d), PpoNoise::Gsde { log_sigma, .. }) = (&mut self.gsde, &agent.noise) {
            d.log_sigma = log_sigma.clone();
            d.resample(&mut self.noise_rng);
            initial_noise = Some(d.theta_eps().clone());
        }
        let mut out = WorkerRollout {
            observations: Vec::with_capacity(n_steps),
            raw_observations: Vec::with_capacity(n_steps),
            actions: Vec::with_capacity(n_steps),
            log_probs: Vec::with_capacity(n_steps),
            values: Vec::with_capacity(n_steps),
            rewards: Vec::with_capacity(n_steps),
            dones: Vec::with_capacity(n_steps),
            timeout_values: Vec::with_capacity(n_steps),
            last_value: 0.0,
            initial_noise,
            episode_returns: Vec::new(),
            episode_costs: Vec::new(),
        };
        let value_of = |raw: &[f64]| -> Result<f64> {
            let obs = agent.normalizer.observation(raw);
            Ok(agent.value.predict_one(&obs)?.1[0])
        };
        for _ in 0..n_steps {
            let obs = agent.normalizer.observation(&self.obs);
            let (z, mean) = agent.policy.predict_one(&obs)?;
            let (action, log_prob) = match (&mut self.gsde, &agent.noise) {
                (Some(d), _) => {
                    let a = d.step_action(&mean, &z, &mut self.noise_rng)?;
                    let lp = d.log_prob(&a, &mean, &z)?;
                    (a, lp)
                }
                (None, PpoNoise::Gaussian { log_std }) => {
                    let std: Vec<f64> = log_std.iter().map(|l| l.exp()).collect();
                    let a: Vec<f64> = mean
                        .iter()
                        .zip(&std)
                        .map(|(m, s)| {
                            let e: f64 = self.noise_rng.sample(StandardNormal);
                            m + s * e
                        })
                        .collect();
                    let lp = gaussian_log_prob(&a, &mean, &std)?;
                    (a, lp)
                }
                (None, PpoNoise::Gsde { .. }) => unreachable!("gSDE workers own a distribution"),
            };
            let value = agent.value.predict_one(&obs)?.1[0];
            let step = self.env.step(&action)?;
            self.continuity.push(&action);
            self.episode_return += step.reward;

            out.raw_observations.push(std::mem::take(&mut self.obs));
            out.observations.push(obs);
            out.actions.push(action);
            out.log_probs.push(log_prob);
            out.values.push(value);
            out.rewards.push(step.reward);
            let done = step.terminated || step.truncated;
            out.dones.push(if done { 1.0 } else { 0.0 });
            out.timeout_values
                .push(if step.truncated && !step.terminated {
                    value_of(&step.observation)?
                } else {
                    0.0
                });
            self.obs = step.observation;
            if done {
                out.episode_returns.push(self.episode_return);
                if let Some(c) = self.continuity.cost() {
                    out.episode_costs.push(c);
                }
                self.reset();
                if let Some(d) = &mut self.gsde {
                    if d.interval() == SampleInterval::Episodic {
                        d.resample(&mut self.noise_rng);
                    }
                }
            }
        }
        out.last_value = value_of(&self.obs)?;
        Ok(out)
    }
}

/// Collects `n_steps` from every worker against the current agent, updates
/// the normalization statistics and computes advantages.
pub fn collect_rollout(
    agent: &mut PpoAgent,
    workers: &mut [Worker],
    n_steps: usize,
    parallel: bool,
) -> Result<(RolloutBuffer, RolloutStats)> {
    if workers.is_empty() {
        return Err(Error::InvalidArgument(
            "PPO needs at least one worker".into(),
        ));
    }
    let snapshot: &PpoAgent = agent;
    let parts: Vec<WorkerRollout> = if parallel {
        workers
            .par_iter_mut()
            .map(|w| w.collect(snapshot, n_steps))
            .collect::<Result<_>>()?
    } else {
        workers
            .iter_mut()
            .map(|w| w.collect(snapshot, n_steps))
            .collect::<Result<_>>()?
    };

    let gamma = agent.config.gamma;
    for (w, part) in workers.iter_mut().zip(&parts) {
        agent.normalizer.obs.update(&part.raw_observations);
        for (r, d) in part.rewards.iter().zip(&part.dones) {
            w.discounted_return = w.discounted_return * gamma + r;
            agent
                .normalizer
                .returns
                .update(&[vec![w.discounted_return]]);
            if *d == 1.0 {
                w.discounted_return = 0.0;
            }
        }
    }

    let total = workers.len() * n_steps;
    let mut obs_rows = Vec::with_capacity(total);
    let mut action_rows = Vec::with_capacity(total);
    let mut buffer = RolloutBuffer {
        n_workers: workers.len(),
        n_steps,
        observations: Matrix::zeros(0, 0),
        actions: Matrix::zeros(0, 0),
        log_probs: Vec::with_capacity(total),
        values: Vec::with_capacity(total),
        rewards: Vec::with_capacity(total),
        raw_rewards: Vec::with_capacity(total),
        dones: Vec::with_capacity(total),
        advantages: Vec::with_capacity(total),
        returns: Vec::with_capacity(total),
        initial_noise: Vec::with_capacity(workers.len()),
    };
    let mut stats = RolloutStats::default();
    for part in parts {
        let rewards: Vec<f64> = part
            .rewards
            .iter()
            .zip(&part.timeout_values)
            .map(|(r, v)| agent.normalizer.reward(*r) + gamma * v)
            .collect();
        let (adv, ret) = gae_compute(
            &rewards,
            &part.values,
            &part.dones,
            part.last_value,
            gamma,
            agent.config.gae_lambda,
        )?;
        obs_rows.extend(part.observations);
        action_rows.extend(part.actions);
        buffer.log_probs.extend(part.log_probs);
        buffer.values.extend(part.values);
        buffer.rewards.extend(rewards);
        buffer.raw_rewards.extend(part.rewards);
        buffer.dones.extend(part.dones);
        buffer.advantages.extend(adv);
        buffer.returns.extend(ret);
        buffer.initial_noise.push(part.initial_noise);
        stats.episode_returns.extend(part.episode_returns);
        stats.episode_costs.extend(part.episode_costs);
    }
    if total > 0 {
        buffer.observations = Matrix::from_rows(&obs_rows)?;
        buffer.actions = Matrix::from_rows(&action_rows)?;
    }
    Ok((buffer, stats))
}

/// Result of [`ppo_train`].
#[derive(Debug)]
pub struct PpoOutcome {
    pub agent: PpoAgent,
    pub log: TrainLog,
    pub streams: SeedStreams,
}

/// Builds the agent and one worker per configured environment copy.
pub fn ppo_setup(
    config: &PpoConfig,
    env_spec: &EnvSpec,
    seed: u64,
) -> Result<(PpoAgent, Vec<Worker>, SeedStreams)> {
    let mut streams = seed_streams(seed);
    let probe = env_spec.build();
    let agent = PpoAgent::new(
        probe.observation_dim(),
        probe.action_dim(),
        config.clone(),
        &mut streams.policy_init,
    )?;
    let workers = (0..config.n_workers)
        .map(|k| Worker::new(k, env_spec, seed, &agent))
        .collect::<Result<Vec<_>>>()?;
    Ok((agent, workers, streams))
}

/// Alternates rollouts of `n_steps` per worker with PPO updates. The budget
/// must be a multiple of the worker count; the last rollout is shortened to
/// fit it.
pub fn ppo_train(
    config: &PpoConfig,
    env_spec: &EnvSpec,
    settings: &RunSettings,
) -> Result<PpoOutcome> {
    ppo_train_with(config, env_spec, settings, &mut |_| Ok(()))
}

/// [`ppo_train`] that hands every log row to `on_row` as soon as it exists.
/// Non-finite parameters or losses end the run with [`Error::Diverged`].
pub fn ppo_train_with(
    config: &PpoConfig,
    env_spec: &EnvSpec,
    settings: &RunSettings,
    on_row: &mut dyn FnMut(&LogRow) -> Result<()>,
) -> Result<PpoOutcome> {
    let n_workers = config.n_workers as u64;
    if n_workers == 0 || settings.total_steps % n_workers != 0 {
        return Err(Error::InvalidArgument(format!(
            "total steps {} must be a multiple of the worker count {}",
            settings.total_steps, config.n_workers
        )));
    }
    let (mut agent, mut workers, mut streams) = ppo_setup(config, env_spec, settings.seed)?;
    let mut eval_env = env_spec.build();
    let mut log = TrainLog::default();
    let mut schedule = EvalSchedule::new(settings);
    let mut t: u64 = 0;
    let mut episodes: u64 = 0;
    while t < settings.total_steps {
        let per_worker =
            (config.n_steps as u64).min((settings.total_steps - t) / n_workers) as usize;
        let (buffer, stats) = collect_rollout(&mut agent, &mut workers, per_worker, true)?;
        t += (per_worker as u64) * n_workers;
        agent
            .update(&buffer, &mut streams.replay)
            .map_err(diverged_at(t))?;
        episodes += stats.episode_returns.len() as u64;

        let eval = if schedule.due(t) {
            let seed = streams.eval.next_u64();
            let report = evaluate_policy(&agent, &mut eval_env, settings.eval_episodes, seed, t)?;
            Some((&report).into())
        } else {
            None
        };
        let mean = |v: &[f64]| crate::metrics::mean_std_error(v).map(|(m, _)| m);
        let row = LogRow {
            timestep: t,
            episode: episodes,
            episode_return: mean(&stats.episode_returns),
            episode_continuity_cost: mean(&stats.episode_costs),
            eval,
            warmup: false,
        };
        on_row(&row)?;
        log.rows.push(row);
        log::debug!("ppo t={t} episodes={episodes}");
    }
    Ok(PpoOutcome {
        agent,
        log,
        streams,
    })
}
