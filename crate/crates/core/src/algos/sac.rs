//! Soft Actor-Critic with gSDE or one of the baseline exploration schemes.
//!
//! The actor always samples through a tanh squashing. With gSDE its output
//! is the mean (clipped to `±mean_clip`) and the noise comes from the
//! feature-linear exploration function; otherwise the actor predicts mean
//! and `log_std` per state, as in the original algorithm. The none / OU /
//! parameter-noise variants train that same actor but act with its
//! deterministic mean, optionally perturbed.

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::replay::{Batch, ReplayBuffer};
use super::{EvalSchedule, Exploration, LogRow, RunSettings, TrainLog};
use crate::distributions::{
    gaussian_log_prob, squash_log_det, squash_log_det_derivative, GsdeDistribution, SampleInterval,
    LOG_STD_MAX, LOG_STD_MIN, STD_FLOOR,
};
use crate::envs::EnvSpec;
use crate::error::diverged_at;
use crate::exploration::{perturb_params, OuProcess, ParamNoise};
use crate::metrics::{evaluate_policy, ContinuityAccumulator, DeterministicPolicy};
use crate::nn::{Activation, AdamState, Forward, Matrix, Mlp, MlpGradients};
use crate::seeding::{seed_streams, SeedStreams};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacConfig {
    pub gamma: f64,
    pub tau: f64,
    pub learning_rate: f64,
    pub buffer_size: usize,
    pub batch_size: usize,
    pub warmup_steps: u64,
    pub hidden: Vec<usize>,
    pub mean_clip: f64,
    /// Defaults to `−dim(A)`.
    pub target_entropy: Option<f64>,
    pub exploration: Exploration,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.98,
            tau: 0.02,
            learning_rate: 7.3e-4,
            buffer_size: 300_000,
            batch_size: 256,
            warmup_steps: 10_000,
            hidden: vec![64, 64],
            mean_clip: 2.0,
            target_entropy: None,
            exploration: Exploration::Gsde {
                interval: SampleInterval::Steps(8),
                log_sigma_init: -3.0,
                transform: Default::default(),
            },
        }
    }
}

/// How the actor turns its output into a stochastic action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SacNoise {
    Gsde(GsdeDistribution),
    /// Mean and `log_std` heads on the actor output.
    Gaussian,
}

/// Random draws behind one batched policy sample.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseDraw {
    /// Standard-normal matrix `E` with `θ_ε = σ ⊙ E`, shared by the batch.
    Gsde(Matrix),
    /// One standard-normal vector per row.
    Gaussian(Matrix),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SacLosses {
    pub critic: f64,
    pub actor: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacAgent {
    pub config: SacConfig,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub actor: Mlp,
    pub noise: SacNoise,
    pub critics: [Mlp; 2],
    pub critic_targets: [Mlp; 2],
    pub log_alpha: f64,
    pub target_entropy: f64,
    pub actor_opt: AdamState,
    pub critic_opt: AdamState,
    pub alpha_opt: AdamState,
    pub ou: Option<OuProcess>,
    pub param_noise: Option<ParamNoise>,
    pub perturbed_actor: Option<Mlp>,
    pub gradient_steps: u64,
}

/// Minimum of the two critics: y = r + γ(1 − done)(min(q1', q2') − α logπ').
pub fn sac_critic_target(
    reward: f64,
    done: f64,
    q1: f64,
    q2: f64,
    log_prob: f64,
    alpha: f64,
    gamma: f64,
) -> f64 {
    reward + gamma * (1.0 - done) * (q1.min(q2) - alpha * log_prob)
}

/// Batched squashed policy sample with everything the gradient needs.
#[derive(Debug, Clone)]
struct PolicySample {
    u: Matrix,
    action: Matrix,
    log_prob: Vec<f64>,
    /// False where the mean (gSDE) or log-std (Gaussian) was clipped.
    mean_free: Vec<bool>,
    /// Pre-squash noise `u − μ`.
    delta: Matrix,
    /// `σ̂` (gSDE) or `exp(log_std)` (Gaussian), floored.
    std: Matrix,
    std_free: Vec<bool>,
}

fn concat_cols(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    a.hstack(b)
}

impl SacAgent {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        action_dim: usize,
        config: SacConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&config.gamma) {
            return Err(Error::InvalidArgument(format!(
                "gamma must lie in [0, 1), got {}",
                config.gamma
            )));
        }
        if config.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        let gsde = matches!(config.exploration, Exploration::Gsde { .. });
        let out_dim = if gsde { action_dim } else { 2 * action_dim };
        let actor = Mlp::new(obs_dim, &config.hidden, out_dim, Activation::Relu, rng);
        let critic = |rng: &mut R| {
            Mlp::new(
                obs_dim + action_dim,
                &config.hidden,
                1,
                Activation::Relu,
                rng,
            )
        };
        let critics = [critic(rng), critic(rng)];
        let noise = match config.exploration {
            Exploration::Gsde {
                interval,
                log_sigma_init,
                transform,
            } => SacNoise::Gsde(GsdeDistribution::new(
                actor.latent_dim(),
                action_dim,
                log_sigma_init,
                interval,
                transform,
            )?),
            _ => SacNoise::Gaussian,
        };
        let (ou, param_noise) = match config.exploration {
            Exploration::Ou { sigma, theta, dt } => {
                (Some(OuProcess::new(action_dim, sigma, theta, dt)), None)
            }
            Exploration::Param {
                initial_stddev,
                target_distance,
                adaptation_factor,
            } => (
                None,
                Some(ParamNoise::new(
                    initial_stddev,
                    target_distance,
                    adaptation_factor,
                )),
            ),
            _ => (None, None),
        };
        let mut actor_groups = actor.param_shapes();
        if gsde {
            actor_groups.push(actor.latent_dim() * action_dim);
        }
        let mut critic_groups = critics[0].param_shapes();
        critic_groups.extend(critics[1].param_shapes());
        let lr = config.learning_rate;
        Ok(Self {
            obs_dim,
            action_dim,
            critic_targets: critics.clone(),
            critics,
            noise,
            log_alpha: 0.0,
            target_entropy: config.target_entropy.unwrap_or(-(action_dim as f64)),
            actor_opt: AdamState::new(&actor_groups, lr),
            critic_opt: AdamState::new(&critic_groups, lr),
            alpha_opt: AdamState::new(&[1], lr),
            actor,
            ou,
            param_noise,
            perturbed_actor: None,
            gradient_steps: 0,
            config,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn gsde(&self) -> Option<&GsdeDistribution> {
        match &self.noise {
            SacNoise::Gsde(d) => Some(d),
            SacNoise::Gaussian => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.actor.is_finite()
            && self.critics.iter().all(Mlp::is_finite)
            && self.critic_targets.iter().all(Mlp::is_finite)
            && self.log_alpha.is_finite()
            && self.gsde().is_none_or(|d| d.log_sigma.is_finite())
    }

    /// Pre-squash mean from a raw actor output row.
    fn mean_from_output(&self, out: &[f64]) -> Vec<f64> {
        let mean = &out[..self.action_dim];
        match self.noise {
            SacNoise::Gsde(_) => mean
                .iter()
                .map(|m| m.clamp(-self.config.mean_clip, self.config.mean_clip))
                .collect(),
            SacNoise::Gaussian => mean.to_vec(),
        }
    }

    /// Noise-free action `tanh(μ(s))` of a given actor network.
    fn squashed_mean(&self, net: &Mlp, obs: &[f64]) -> Result<Vec<f64>> {
        let (_, out) = net.predict_one(obs)?;
        Ok(self
            .mean_from_output(&out)
            .iter()
            .map(|m| m.tanh())
            .collect())
    }

    /// Resets per-episode exploration state.
    pub fn begin_episode<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        if let SacNoise::Gsde(d) = &mut self.noise {
            d.resample(rng);
        }
        if let Some(ou) = &mut self.ou {
            ou.reset();
        }
        if let Some(pn) = &self.param_noise {
            self.perturbed_actor = Some(perturb_params(&self.actor, pn.stddev, rng));
        }
    }

    /// Exploratory action in `[-1, 1]` for one observation.
    pub fn explore<R: Rng + ?Sized>(&mut self, obs: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        match self.config.exploration {
            Exploration::Gsde { .. } => {
                let (z, out) = self.actor.predict_one(obs)?;
                let mean = self.mean_from_output(&out);
                let SacNoise::Gsde(d) = &mut self.noise else {
                    unreachable!("gSDE exploration owns a gSDE distribution")
                };
                Ok(d.step_action(&mean, &z, rng)?
                    .iter()
                    .map(|u| u.tanh())
                    .collect())
            }
            Exploration::Gaussian { .. } => {
                let (_, out) = self.actor.predict_one(obs)?;
                let a = self.action_dim;
                Ok((0..a)
                    .map(|j| {
                        let std = out[a + j].clamp(LOG_STD_MIN, LOG_STD_MAX).exp();
                        let e: f64 = rng.sample(StandardNormal);
                        (out[j] + std * e).tanh()
                    })
                    .collect())
            }
            Exploration::None => self.squashed_mean(&self.actor, obs),
            Exploration::Ou { .. } => {
                let base = self.squashed_mean(&self.actor, obs)?;
                let ou = self.ou.as_mut().expect("OU exploration owns a process");
                let noise = ou.step(rng);
                Ok(base
                    .iter()
                    .zip(noise)
                    .map(|(a, n)| (a + n).clamp(-1.0, 1.0))
                    .collect())
            }
            Exploration::Param { .. } => {
                let net = self.perturbed_actor.as_ref().unwrap_or(&self.actor);
                self.squashed_mean(net, obs)
            }
        }
    }

    /// Adapts the parameter-noise scale from the action distance between the
    /// clean and perturbed actors on `states`.
    pub fn adapt_param_noise(&mut self, states: &Matrix) -> Result<Option<f64>> {
        let (Some(perturbed), Some(_)) = (&self.perturbed_actor, &self.param_noise) else {
            return Ok(None);
        };
        if states.rows() == 0 {
            return Ok(None);
        }
        let squash = |net: &Mlp| -> Result<Matrix> {
            let out = net.predict(states)?;
            let rows: Vec<Vec<f64>> = out
                .iter_rows()
                .map(|r| self.mean_from_output(r).iter().map(|m| m.tanh()).collect())
                .collect();
            Matrix::from_rows(&rows)
        };
        let distance =
            crate::exploration::rms_distance(&squash(&self.actor)?, &squash(perturbed)?)?;
        let pn = self.param_noise.as_mut().expect("checked above");
        pn.adapt(distance);
        Ok(Some(distance))
    }

    /// Fresh draws for one batched policy sample.
    pub fn draw_noise<R: Rng + ?Sized>(&mut self, batch: usize, rng: &mut R) -> NoiseDraw {
        match &mut self.noise {
            SacNoise::Gsde(d) => {
                d.resample(rng);
                NoiseDraw::Gsde(d.unit_noise().clone())
            }
            SacNoise::Gaussian => {
                let data = (0..batch * self.action_dim)
                    .map(|_| rng.sample(StandardNormal))
                    .collect();
                NoiseDraw::Gaussian(Matrix::from_vec(batch, self.action_dim, data).expect("sized"))
            }
        }
    }

    fn sample_policy(&self, fwd: &Forward, draw: &NoiseDraw) -> Result<PolicySample> {
        let b = fwd.output.rows();
        let a = self.action_dim;
        let mut mean = Matrix::zeros(b, a);
        let mut mean_free = vec![true; b * a];
        let mut delta = Matrix::zeros(b, a);
        let mut std = Matrix::zeros(b, a);
        let mut std_free = vec![true; b * a];
        match (&self.noise, draw) {
            (SacNoise::Gsde(d), NoiseDraw::Gsde(unit)) => {
                if unit.shape() != d.log_sigma.shape() {
                    return Err(crate::error::shape_err(
                        "SacAgent noise draw",
                        format!("{:?}", d.log_sigma.shape()),
                        format!("{:?}", unit.shape()),
                    ));
                }
                let sigma = d.sigma();
                let mut theta = sigma.clone();
                for (t, e) in theta.data_mut().iter_mut().zip(unit.data()) {
                    *t *= e;
                }
                let z = &fwd.latent;
                delta = z.matmul(&theta)?;
                let z2 = z.map(|x| x * x);
                let var = z2.matmul(&sigma.map(|s| s * s))?;
                for (k, v) in var.data().iter().enumerate() {
                    let s = v.sqrt();
                    std_free[k] = s >= STD_FLOOR;
                    std.data_mut()[k] = s.max(STD_FLOOR);
                }
                let clip = self.config.mean_clip;
                for r in 0..b {
                    for j in 0..a {
                        let m = fwd.output.get(r, j);
                        mean_free[r * a + j] = m.abs() <= clip;
                        mean.set(r, j, m.clamp(-clip, clip));
                    }
                }
            }
            (SacNoise::Gaussian, NoiseDraw::Gaussian(eps)) => {
                if eps.shape() != (b, a) {
                    return Err(crate::error::shape_err(
                        "SacAgent noise draw",
                        format!("{:?}", (b, a)),
                        format!("{:?}", eps.shape()),
                    ));
                }
                for r in 0..b {
                    for j in 0..a {
                        let raw = fwd.output.get(r, a + j);
                        std_free[r * a + j] = (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw);
                        let s = raw.clamp(LOG_STD_MIN, LOG_STD_MAX).exp();
                        std.set(r, j, s);
                        mean.set(r, j, fwd.output.get(r, j));
                        delta.set(r, j, s * eps.get(r, j));
                    }
                }
            }
            _ => {
                return Err(Error::InvalidArgument(
                    "noise draw does not match the actor".into(),
                ))
            }
        }
        let mut u = mean.clone();
        u.add_scaled(&delta, 1.0)?;
        let action = u.map(f64::tanh);
        let mut log_prob = Vec::with_capacity(b);
        for r in 0..b {
            let lp = gaussian_log_prob(u.row(r), mean.row(r), std.row(r))?;
            log_prob.push(lp - squash_log_det(u.row(r)));
        }
        Ok(PolicySample {
            u,
            action,
            log_prob,
            mean_free,
            delta,
            std,
            std_free,
        })
    }

    fn critic_values(nets: &[Mlp; 2], input: &Matrix) -> Result<[Vec<f64>; 2]> {
        Ok([
            nets[0].predict(input)?.into_vec(),
            nets[1].predict(input)?.into_vec(),
        ])
    }

    /// Critic targets for a batch, using `draw` for the next-state actions.
    fn targets(&self, batch: &Batch, draw: &NoiseDraw, alpha: f64) -> Result<Vec<f64>> {
        let fwd = self.actor.forward(&batch.next_observations)?;
        let next = self.sample_policy(&fwd, draw)?;
        let input = concat_cols(&batch.next_observations, &next.action)?;
        let [q1, q2] = Self::critic_values(&self.critic_targets, &input)?;
        Ok((0..batch.len())
            .map(|i| {
                sac_critic_target(
                    batch.rewards[i],
                    batch.dones[i],
                    q1[i],
                    q2[i],
                    next.log_prob[i],
                    alpha,
                    self.config.gamma,
                )
            })
            .collect())
    }

    /// Actor loss `mean(α logπ(ã|s) − min Q(s, ã))` with its gradients with
    /// respect to the actor parameters and, under gSDE, `log σ`.
    pub fn actor_loss_and_gradients(
        &self,
        observations: &Matrix,
        draw: &NoiseDraw,
        alpha: f64,
    ) -> Result<(f64, MlpGradients, Option<Matrix>)> {
        let (loss, _, grads, log_sigma) = self.actor_pass(observations, draw, alpha)?;
        Ok((loss, grads, log_sigma))
    }

    fn actor_pass(
        &self,
        observations: &Matrix,
        draw: &NoiseDraw,
        alpha: f64,
    ) -> Result<(f64, Vec<f64>, MlpGradients, Option<Matrix>)> {
        let b = observations.rows();
        let a = self.action_dim;
        let bf = b as f64;
        let fwd = self.actor.forward(observations)?;
        let sample = self.sample_policy(&fwd, draw)?;

        let input = concat_cols(observations, &sample.action)?;
        let f1 = self.critics[0].forward(&input)?;
        let f2 = self.critics[1].forward(&input)?;
        let (q1, q2) = (f1.output.data(), f2.output.data());
        let mut up1 = Matrix::zeros(b, 1);
        let mut up2 = Matrix::zeros(b, 1);
        let mut loss = 0.0;
        for i in 0..b {
            let q = q1[i].min(q2[i]);
            loss += (alpha * sample.log_prob[i] - q) / bf;
            if q1[i] <= q2[i] {
                up1.set(i, 0, 1.0);
            } else {
                up2.set(i, 0, 1.0);
            }
        }
        let g1 = self.critics[0].backward(&f1.tape, &up1)?;
        let g2 = self.critics[1].backward(&f2.tape, &up2)?;
        let mut dq_da = g1.input.columns(self.obs_dim, self.obs_dim + a);
        dq_da.add_scaled(&g2.input.columns(self.obs_dim, self.obs_dim + a), 1.0)?;

        // dL/du through the squash correction and the critic
        let mut g_u = Matrix::zeros(b, a);
        for r in 0..b {
            for j in 0..a {
                let u = sample.u.get(r, j);
                let act = sample.action.get(r, j);
                let g = alpha * -squash_log_det_derivative(u) - dq_da.get(r, j) * (1.0 - act * act);
                g_u.set(r, j, g / bf);
            }
        }

        let out_dim = self.actor.output_dim();
        let mut upstream = Matrix::zeros(b, out_dim);
        let mut log_sigma_grad = None;
        match (&self.noise, draw) {
            (SacNoise::Gsde(d), NoiseDraw::Gsde(unit)) => {
                let z = &fwd.latent;
                let mut h = Matrix::zeros(b, a);
                let mut k = Matrix::zeros(b, a);
                for r in 0..b {
                    for j in 0..a {
                        let idx = r * a + j;
                        if sample.mean_free[idx] {
                            upstream.set(r, j, g_u.get(r, j));
                        }
                        let s = sample.std.get(r, j);
                        let dl = sample.delta.get(r, j);
                        h.set(r, j, g_u.get(r, j) - alpha * dl / (s * s) / bf);
                        if sample.std_free[idx] {
                            k.set(r, j, alpha * (dl * dl / (s * s * s) - 1.0 / s) / s / bf);
                        }
                    }
                }
                let sigma = d.sigma();
                let mut grad = z.t_matmul(&h)?;
                for (g, e) in grad.data_mut().iter_mut().zip(unit.data()) {
                    *g *= e;
                }
                let mut second = z.map(|x| x * x).t_matmul(&k)?;
                for (g, s) in second.data_mut().iter_mut().zip(sigma.data()) {
                    *g *= s;
                }
                grad.add_scaled(&second, 1.0)?;
                let transform = d.transform();
                for (g, ls) in grad.data_mut().iter_mut().zip(d.log_sigma.data()) {
                    *g *= transform.derivative(*ls);
                }
                log_sigma_grad = Some(grad);
            }
            (SacNoise::Gaussian, NoiseDraw::Gaussian(eps)) => {
                for r in 0..b {
                    for j in 0..a {
                        let g = g_u.get(r, j);
                        upstream.set(r, j, g);
                        if sample.std_free[r * a + j] {
                            let s = sample.std.get(r, j);
                            upstream.set(r, a + j, -alpha / bf + g * s * eps.get(r, j));
                        }
                    }
                }
            }
            _ => {
                return Err(Error::InvalidArgument(
                    "noise draw does not match the actor".into(),
                ))
            }
        }
        let grads = self.actor.backward(&fwd.tape, &upstream)?;
        Ok((loss, sample.log_prob, grads, log_sigma_grad))
    }

    /// The three losses at the current parameters for fixed noise draws,
    /// without updating anything.
    pub fn sac_losses(
        &self,
        batch: &Batch,
        current: &NoiseDraw,
        next: &NoiseDraw,
    ) -> Result<SacLosses> {
        let alpha = self.alpha();
        let y = self.targets(batch, next, alpha)?;
        let input = concat_cols(&batch.observations, &batch.actions)?;
        let [q1, q2] = Self::critic_values(&self.critics, &input)?;
        let n = batch.len() as f64;
        let mse = |q: &[f64]| {
            q.iter()
                .zip(&y)
                .map(|(q, y)| (q - y) * (q - y))
                .sum::<f64>()
                / n
        };
        let critic = 0.5 * (mse(&q1) + mse(&q2));
        let fwd = self.actor.forward(&batch.observations)?;
        let sample = self.sample_policy(&fwd, current)?;
        let pi_input = concat_cols(&batch.observations, &sample.action)?;
        let [p1, p2] = Self::critic_values(&self.critics, &pi_input)?;
        let actor = (0..batch.len())
            .map(|i| alpha * sample.log_prob[i] - p1[i].min(p2[i]))
            .sum::<f64>()
            / n;
        let alpha_loss = sample
            .log_prob
            .iter()
            .map(|lp| -self.log_alpha * (lp + self.target_entropy))
            .sum::<f64>()
            / n;
        Ok(SacLosses {
            critic,
            actor,
            alpha: alpha_loss,
        })
    }

    /// One gradient step: temperature, critics, actor, then targets.
    pub fn gradient_step(
        &mut self,
        batch: &Batch,
        current: &NoiseDraw,
        next: &NoiseDraw,
    ) -> Result<SacLosses> {
        let n = batch.len() as f64;
        let alpha = self.alpha();

        // temperature
        let fwd = self.actor.forward(&batch.observations)?;
        let sample = self.sample_policy(&fwd, current)?;
        let grad_log_alpha = -sample
            .log_prob
            .iter()
            .map(|lp| lp + self.target_entropy)
            .sum::<f64>()
            / n;
        let alpha_loss = self.log_alpha * grad_log_alpha;
        if !grad_log_alpha.is_finite() {
            return Err(Error::NonFinite("entropy temperature gradient".into()));
        }

        // critics
        let y = self.targets(batch, next, alpha)?;
        let input = concat_cols(&batch.observations, &batch.actions)?;
        let mut critic_loss = 0.0;
        let mut critic_grads = Vec::with_capacity(2);
        for net in &self.critics {
            let f = net.forward(&input)?;
            let mut up = Matrix::zeros(batch.len(), 1);
            for (i, (q, y)) in f.output.data().iter().zip(&y).enumerate() {
                critic_loss += 0.5 * (q - y) * (q - y) / n;
                up.set(i, 0, (q - y) / n);
            }
            critic_grads.push(net.backward(&f.tape, &up)?);
        }
        if !critic_loss.is_finite() {
            return Err(Error::NonFinite("critic loss".into()));
        }

        let mut la = [self.log_alpha];
        self.alpha_opt.step(&mut [&mut la], &[&[grad_log_alpha]])?;
        self.log_alpha = la[0];

        {
            let [c0, c1] = &mut self.critics;
            let mut params = c0.param_slices_mut();
            params.extend(c1.param_slices_mut());
            let mut grads = critic_grads[0].slices();
            grads.extend(critic_grads[1].slices());
            self.critic_opt.step(&mut params, &grads)?;
        }

        // actor, against the updated critics
        let (actor_loss, _, actor_grads, log_sigma_grad) =
            self.actor_pass(&batch.observations, current, alpha)?;
        if !actor_loss.is_finite() {
            return Err(Error::NonFinite("actor loss".into()));
        }
        {
            let mut params = self.actor.param_slices_mut();
            let mut grads = actor_grads.slices();
            if let (SacNoise::Gsde(d), Some(g)) = (&mut self.noise, &log_sigma_grad) {
                params.push(d.log_sigma.data_mut());
                grads.push(g.data());
            }
            self.actor_opt.step(&mut params, &grads)?;
        }

        for k in 0..2 {
            super::soft_update(
                &self.critics[k],
                &mut self.critic_targets[k],
                self.config.tau,
            )?;
        }
        self.gradient_steps += 1;
        Ok(SacLosses {
            critic: critic_loss,
            actor: actor_loss,
            alpha: alpha_loss,
        })
    }
}

impl DeterministicPolicy for SacAgent {
    fn deterministic_action(&self, observation: &[f64]) -> Result<Vec<f64>> {
        self.squashed_mean(&self.actor, observation)
    }
}

/// Result of [`sac_train`].
#[derive(Debug, Clone)]
pub struct SacOutcome {
    pub agent: SacAgent,
    pub log: TrainLog,
    pub streams: SeedStreams,
    pub replay: ReplayBuffer,
}

/// Episodic SAC: collect one episode, then take as many gradient steps as
/// the episode had environment steps. Uniform warm-up actions are used for
/// the first `warmup_steps` unless exploration is disabled altogether.
pub fn sac_train(
    config: &SacConfig,
    env_spec: &EnvSpec,
    settings: &RunSettings,
) -> Result<SacOutcome> {
    sac_train_with(config, env_spec, settings, &mut |_| Ok(()))
}

/// [`sac_train`] that hands every log row to `on_row` as soon as it exists.
/// Non-finite parameters or losses end the run with [`Error::Diverged`].
pub fn sac_train_with(
    config: &SacConfig,
    env_spec: &EnvSpec,
    settings: &RunSettings,
    on_row: &mut dyn FnMut(&LogRow) -> Result<()>,
) -> Result<SacOutcome> {
    let mut streams = seed_streams(settings.seed);
    let mut env = env_spec.build();
    let mut eval_env = env_spec.build();
    let (obs_dim, action_dim) = (env.observation_dim(), env.action_dim());
    let mut agent = SacAgent::new(
        obs_dim,
        action_dim,
        config.clone(),
        &mut streams.policy_init,
    )?;
    let mut replay = ReplayBuffer::new(config.buffer_size, obs_dim, action_dim)?;
    let mut log = TrainLog::default();
    let mut schedule = EvalSchedule::new(settings);
    let uniform_warmup = config.exploration != Exploration::None;

    let mut t: u64 = 0;
    let mut episodes: u64 = 0;
    while t < settings.total_steps {
        let mut obs = env.reset(streams.env.next_u64());
        agent.begin_episode(&mut streams.noise);
        let mut acc = ContinuityAccumulator::symmetric(action_dim, 1.0);
        let mut episode_return = 0.0;
        let mut length = 0usize;
        let mut warm = false;
        loop {
            let action = if uniform_warmup && t < config.warmup_steps {
                warm = true;
                (0..action_dim)
                    .map(|_| streams.warmup.random_range(-1.0..=1.0))
                    .collect()
            } else {
                agent.explore(&obs, &mut streams.noise)?
            };
            let step = env.step(&action)?;
            replay.push(
                &obs,
                &action,
                step.reward,
                &step.observation,
                step.terminated,
            )?;
            acc.push(&action);
            episode_return += step.reward;
            obs = step.observation;
            t += 1;
            length += 1;
            if step.terminated || step.truncated || t >= settings.total_steps {
                break;
            }
        }
        episodes += 1;

        if agent.param_noise.is_some() && agent.perturbed_actor.is_some() && !warm {
            let probe = replay.sample(config.batch_size, &mut streams.replay)?;
            agent.adapt_param_noise(&probe.observations)?;
        }
        if t > config.warmup_steps {
            for _ in 0..length {
                let batch = replay.sample(config.batch_size, &mut streams.replay)?;
                let current = agent.draw_noise(batch.len(), &mut streams.noise);
                let next = match &current {
                    NoiseDraw::Gsde(_) => current.clone(),
                    NoiseDraw::Gaussian(_) => agent.draw_noise(batch.len(), &mut streams.noise),
                };
                agent
                    .gradient_step(&batch, &current, &next)
                    .map_err(diverged_at(t))?;
            }
            if !agent.is_finite() {
                return Err(Error::Diverged {
                    timestep: t,
                    what: "SAC parameters".into(),
                });
            }
        }

        let eval = if schedule.due(t) {
            let seed = streams.eval.next_u64();
            let report = evaluate_policy(&agent, &mut eval_env, settings.eval_episodes, seed, t)?;
            Some((&report).into())
        } else {
            None
        };
        let row = LogRow {
            timestep: t,
            episode: episodes,
            episode_return: Some(episode_return),
            episode_continuity_cost: acc.cost(),
            eval,
            warmup: warm,
        };
        on_row(&row)?;
        log.rows.push(row);
        log::debug!("sac t={t} episode={episodes} return={episode_return:.3}");
    }
    Ok(SacOutcome {
        agent,
        log,
        streams,
        replay,
    })
}
