mod common;

use common::rel_err;
use gsde::algos::sac::NoiseDraw;
use gsde::algos::*;
use gsde::distributions::{gaussian_log_prob, GsdeDistribution, SampleInterval, VarianceTransform};
use gsde::envs::{Env, EnvId, EnvSpec};
use gsde::exploration::NoiseKind;
use gsde::nn::{Activation, Layer, Matrix, Mlp};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

/// `A_t = Σ_{k≥t} (γλ)^{k−t} Π_{m<k} (1 − d_m) δ_k`.
fn gae_brute_force(r: &[f64], v: &[f64], d: &[f64], last: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = r.len();
    let next = |k: usize| if k + 1 < n { v[k + 1] } else { last };
    (0..n)
        .map(|t| {
            let mut total = 0.0;
            for k in t..n {
                let alive: f64 = (t..k).map(|m| 1.0 - d[m]).product();
                let delta = r[k] + gamma * (1.0 - d[k]) * next(k) - v[k];
                total += (gamma * lambda).powi((k - t) as i32) * alive * delta;
            }
            total
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn gae_matches_explicit_sum(
        rows in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, proptest::bool::weighted(0.2)), 1..=16),
        last in -5.0f64..5.0,
        gamma in 0.0f64..1.0,
        lambda in 0.0f64..=1.0,
    ) {
        let r: Vec<f64> = rows.iter().map(|x| x.0).collect();
        let v: Vec<f64> = rows.iter().map(|x| x.1).collect();
        let d: Vec<f64> = rows.iter().map(|x| if x.2 { 1.0 } else { 0.0 }).collect();
        let (adv, ret) = gae_compute(&r, &v, &d, last, gamma, lambda).unwrap();
        let expected = gae_brute_force(&r, &v, &d, last, gamma, lambda);
        for t in 0..r.len() {
            prop_assert!((adv[t] - expected[t]).abs() < 1e-12);
            prop_assert!((ret[t] - (adv[t] + v[t])).abs() < 1e-12);
        }
    }
}

#[test]
fn gae_lambda_one_is_discounted_return_minus_value() {
    let r = [1.0, 2.0, -1.0, 0.5];
    let v = [0.3, -0.2, 0.7, 0.1];
    let (adv, _) = gae_compute(&r, &v, &[0.0; 4], 2.0, 0.9, 1.0).unwrap();
    for t in 0..4 {
        let mut g = 0.9f64.powi((4 - t) as i32) * 2.0;
        for k in t..4 {
            g += 0.9f64.powi((k - t) as i32) * r[k];
        }
        assert!((adv[t] - (g - v[t])).abs() < 1e-12);
    }
}

#[test]
fn critic_target_examples() {
    assert_eq!(sac_critic_target(1.0, 1.0, 5.0, 3.0, -2.0, 0.2, 0.99), 1.0);
    let y = sac_critic_target(0.5, 0.0, 5.0, 3.0, -2.0, 0.2, 0.98);
    assert!((y - (0.5 + 0.98 * (3.0 + 0.4))).abs() < 1e-15);
}

fn sac_agent(exploration: Exploration, seed: u64) -> SacAgent {
    let config = SacConfig { hidden: vec![8, 8], exploration, batch_size: 6, ..Default::default() };
    let mut rng = gsde::Rng::seed_from_u64(seed);
    let mut agent = SacAgent::new(3, 2, config, &mut rng).unwrap();
    agent.log_alpha = -0.7;
    agent
}

fn observations(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = gsde::Rng::seed_from_u64(seed);
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

/// Checks `analytic` against five-point differences of `loss` in every
/// coordinate of `params`, skipping coordinates where two step sizes
/// disagree (a ReLU, clip or min kink lies within reach).
fn check_gradient(loss: impl Fn(&[f64]) -> f64, params: &[f64], analytic: &[f64]) -> usize {
    let fd = |k: usize, h: f64| common::five_point(|x| {
        let mut p = params.to_vec();
        p[k] = x;
        loss(&p)
    }, params[k], h);
    let mut checked = 0;
    for k in 0..params.len() {
        let (a, b) = (fd(k, 1e-4), fd(k, 5e-5));
        if rel_err(a, b, 1e-4) > 1e-7 {
            continue;
        }
        checked += 1;
        assert!(rel_err(analytic[k], a, 1e-4) < 1e-6, "coordinate {k}: {} vs {a}", analytic[k]);
    }
    checked
}

fn with_actor_params(agent: &SacAgent, p: &[f64]) -> SacAgent {
    let mut out = agent.clone();
    let mut k = 0;
    for g in out.actor.param_slices_mut() {
        for x in g.iter_mut() {
            *x = p[k];
            k += 1;
        }
    }
    if let SacNoise::Gsde(d) = &mut out.noise {
        for x in d.log_sigma.data_mut() {
            *x = p[k];
            k += 1;
        }
    }
    out
}

/// SAC actor loss recomputed from the networks. In the gSDE case the
/// exploration features come from `features_from`, so they stay fixed while
/// the actor parameters move.
fn sac_reference_loss(agent: &SacAgent, features_from: &SacAgent, obs: &Matrix, draw: &NoiseDraw, alpha: f64) -> f64 {
    let a = 2;
    let mut total = 0.0;
    for r in 0..obs.rows() {
        let out = agent.actor.predict_one(obs.row(r)).unwrap().1;
        let (mean, std, delta): (Vec<f64>, Vec<f64>, Vec<f64>) = match (&agent.noise, draw) {
            (SacNoise::Gsde(d), NoiseDraw::Gsde(unit)) => {
                let z = features_from.actor.predict_one(obs.row(r)).unwrap().0;
                let sigma = d.sigma();
                let mean = out[..a].iter().map(|m| m.clamp(-2.0, 2.0)).collect();
                let std = (0..a).map(|j| z.iter().enumerate().map(|(i, zi)| (zi * sigma.get(i, j)).powi(2)).sum::<f64>().sqrt()).collect();
                let delta = (0..a).map(|j| z.iter().enumerate().map(|(i, zi)| zi * sigma.get(i, j) * unit.get(i, j)).sum()).collect();
                (mean, std, delta)
            }
            (SacNoise::Gaussian, NoiseDraw::Gaussian(eps)) => {
                let std: Vec<f64> = out[a..].iter().map(|l| l.clamp(-20.0, 2.0).exp()).collect();
                let delta = (0..a).map(|j| std[j] * eps.get(r, j)).collect();
                (out[..a].to_vec(), std, delta)
            }
            _ => unreachable!(),
        };
        let u: Vec<f64> = (0..a).map(|j| mean[j] + delta[j]).collect();
        let mut lp = gaussian_log_prob(&u, &mean, &std).unwrap();
        for x in &u {
            lp -= (1.0 - x.tanh().powi(2) + 1e-6).ln();
        }
        let mut input = obs.row(r).to_vec();
        input.extend(u.iter().map(|x| x.tanh()));
        let q1 = agent.critics[0].predict_one(&input).unwrap().1[0];
        let q2 = agent.critics[1].predict_one(&input).unwrap().1[0];
        total += (alpha * lp - q1.min(q2)) / obs.rows() as f64;
    }
    total
}

fn sac_actor_check(exploration: Exploration, seed: u64) {
    let mut agent = sac_agent(exploration, seed);
    let obs = observations(6, 3, seed + 1);
    let mut rng = gsde::Rng::seed_from_u64(seed + 2);
    let draw = agent.draw_noise(6, &mut rng);
    let alpha = agent.alpha();
    let (loss, grads, log_sigma) = agent.actor_loss_and_gradients(&obs, &draw, alpha).unwrap();
    assert!((loss - sac_reference_loss(&agent, &agent, &obs, &draw, alpha)).abs() < 1e-12);
    let mut params = agent.actor.param_slices().concat();
    let mut analytic = grads.slices().concat();
    if let (SacNoise::Gsde(d), Some(g)) = (&agent.noise, &log_sigma) {
        params.extend_from_slice(d.log_sigma.data());
        analytic.extend_from_slice(g.data());
    }
    let loss = |p: &[f64]| sac_reference_loss(&with_actor_params(&agent, p), &agent, &obs, &draw, alpha);
    let checked = check_gradient(loss, &params, &analytic);
    assert!(checked * 10 >= params.len() * 9, "only {checked} of {} coordinates smooth", params.len());
}

#[test]
fn sac_actor_gradient_gsde() {
    for seed in 0..4 {
        sac_actor_check(Exploration::default_for(NoiseKind::Gsde, SampleInterval::Steps(8), -1.0), seed);
    }
}

#[test]
fn sac_actor_gradient_gaussian() {
    for seed in 0..4 {
        sac_actor_check(Exploration::Gaussian { log_std_init: 0.0 }, seed);
    }
}

#[test]
fn sac_gradient_step_moves_parameters_and_stays_finite() {
    let mut agent = sac_agent(Exploration::default_for(NoiseKind::Gsde, SampleInterval::Steps(8), -3.0), 0);
    let mut replay = ReplayBuffer::new(100, 3, 2).unwrap();
    let mut rng = gsde::Rng::seed_from_u64(0);
    for i in 0..50 {
        let s: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        replay.push(&s, &a, -(i as f64) / 50.0, &s, i % 10 == 9).unwrap();
    }
    let before = agent.clone();
    for _ in 0..20 {
        let batch = replay.sample(6, &mut rng).unwrap();
        let draw = agent.draw_noise(6, &mut rng);
        agent.gradient_step(&batch, &draw, &draw.clone()).unwrap();
    }
    assert!(agent.is_finite());
    assert_ne!(agent.actor, before.actor);
    assert_ne!(agent.critic_targets[0], before.critic_targets[0]);
    assert_eq!(agent.gradient_steps, 20);
}

fn ppo_agent(exploration: Exploration, seed: u64) -> PpoAgent {
    let config = PpoConfig { hidden: vec![8, 8], exploration, ent_coef: 0.01, ..Default::default() };
    let mut rng = gsde::Rng::seed_from_u64(seed);
    PpoAgent::new(3, 2, config, &mut rng).unwrap()
}

fn ppo_batch(agent: &PpoAgent, seed: u64, spread: f64) -> PpoBatch {
    let obs = observations(7, 3, seed);
    let mut rng = gsde::Rng::seed_from_u64(seed + 100);
    let actions = Matrix::from_vec(7, 2, (0..14).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let mut old = Vec::new();
    for r in 0..7 {
        let (z, mu) = agent.policy.predict_one(obs.row(r)).unwrap();
        let std = match &agent.noise {
            PpoNoise::Gsde { log_sigma, transform, .. } => gsde::distributions::gsde_std(log_sigma, &z, *transform).unwrap(),
            PpoNoise::Gaussian { log_std } => log_std.iter().map(|l| l.exp()).collect(),
        };
        let lp = gaussian_log_prob(actions.row(r), &mu, &std).unwrap();
        old.push(if spread > 0.0 { lp + rng.random_range(-spread..spread) } else { lp });
    }
    PpoBatch {
        observations: obs,
        actions,
        old_log_probs: old,
        advantages: (0..7).map(|_| rng.random_range(-2.0..2.0)).collect(),
        returns: (0..7).map(|_| rng.random_range(-3.0..3.0)).collect(),
    }
}

fn with_ppo_params(agent: &PpoAgent, p: &[f64]) -> PpoAgent {
    let mut out = agent.clone();
    let mut k = 0;
    let mut groups = out.policy.param_slices_mut();
    groups.extend(out.value.param_slices_mut());
    for g in groups {
        for x in g.iter_mut() {
            *x = p[k];
            k += 1;
        }
    }
    let noise = match &mut out.noise {
        PpoNoise::Gsde { log_sigma, .. } => log_sigma.data_mut(),
        PpoNoise::Gaussian { log_std } => log_std.as_mut_slice(),
    };
    for x in noise {
        *x = p[k];
        k += 1;
    }
    out
}

/// Clipped surrogate, value MSE and entropy recomputed from the networks,
/// with the gSDE features taken from `features_from`.
fn ppo_reference(agent: &PpoAgent, features_from: &PpoAgent, batch: &PpoBatch) -> (f64, f64, f64, f64) {
    let n = batch.advantages.len() as f64;
    let mean_a = batch.advantages.iter().sum::<f64>() / n;
    let sd = (batch.advantages.iter().map(|a| (a - mean_a).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let c = agent.config.clip_range;
    let (mut policy, mut value, mut entropy, mut clipped) = (0.0, 0.0, 0.0, 0.0);
    for r in 0..batch.advantages.len() {
        let s = batch.observations.row(r);
        let mu = agent.policy.predict_one(s).unwrap().1;
        let std: Vec<f64> = match &agent.noise {
            PpoNoise::Gsde { log_sigma, .. } => {
                let z = features_from.policy.predict_one(s).unwrap().0;
                (0..2).map(|j| z.iter().enumerate().map(|(i, zi)| (zi * log_sigma.get(i, j).exp()).powi(2)).sum::<f64>().sqrt()).collect()
            }
            PpoNoise::Gaussian { log_std } => log_std.iter().map(|l| l.exp()).collect(),
        };
        let lp = gaussian_log_prob(batch.actions.row(r), &mu, &std).unwrap();
        let rho = (lp - batch.old_log_probs[r]).exp();
        let adv = (batch.advantages[r] - mean_a) / (sd + 1e-8);
        policy -= (rho * adv).min(rho.clamp(1.0 - c, 1.0 + c) * adv) / n;
        let v = agent.value.predict_one(s).unwrap().1[0];
        value += (v - batch.returns[r]).powi(2) / n;
        entropy += std.iter().map(|x| 0.5 + 0.5 * (2.0 * std::f64::consts::PI).ln() + x.ln()).sum::<f64>() / n;
        if (rho - 1.0).abs() > c {
            clipped += 1.0 / n;
        }
    }
    (policy, value, entropy, clipped)
}

fn ppo_total(agent: &PpoAgent, features_from: &PpoAgent, batch: &PpoBatch) -> f64 {
    let (p, v, e, _) = ppo_reference(agent, features_from, batch);
    p + agent.config.vf_coef * v - agent.config.ent_coef * e
}

fn ppo_gradient_check(exploration: Exploration) {
    for seed in 0..4 {
        let agent = ppo_agent(exploration, seed);
        let batch = ppo_batch(&agent, seed, 0.6);
        let (_, grads) = agent.loss_and_gradients(&batch).unwrap();
        let mut params = agent.policy.param_slices().concat();
        params.extend(agent.value.param_slices().concat());
        let mut analytic: Vec<f64> = grads.policy.concat();
        analytic.extend(grads.value.concat());
        match &agent.noise {
            PpoNoise::Gsde { log_sigma, .. } => params.extend_from_slice(log_sigma.data()),
            PpoNoise::Gaussian { log_std } => params.extend_from_slice(log_std),
        }
        analytic.extend_from_slice(&grads.noise);
        let checked = check_gradient(|p| ppo_total(&with_ppo_params(&agent, p), &agent, &batch), &params, &analytic);
        assert!(checked * 10 >= params.len() * 9);
    }
}

#[test]
fn ppo_gradient_gsde() {
    ppo_gradient_check(Exploration::default_for(NoiseKind::Gsde, SampleInterval::Steps(4), -1.0));
}

#[test]
fn ppo_gradient_gaussian() {
    ppo_gradient_check(Exploration::Gaussian { log_std_init: -0.5 });
}

#[test]
fn ppo_loss_matches_reference() {
    for exploration in [
        Exploration::Gaussian { log_std_init: -0.5 },
        Exploration::default_for(NoiseKind::Gsde, SampleInterval::Steps(4), -1.0),
    ] {
        let agent = ppo_agent(exploration, 1);
        let batch = ppo_batch(&agent, 5, 0.8);
        let l = agent.ppo_loss(&batch).unwrap();
        let (policy, value, entropy, clipped) = ppo_reference(&agent, &agent, &batch);
        assert!((l.policy - policy).abs() < 1e-12);
        assert!((l.value - value).abs() < 1e-12);
        assert!((l.entropy - entropy).abs() < 1e-12);
        assert!((l.clip_fraction - clipped).abs() < 1e-12);
        assert!(clipped > 0.0);
    }
}

/// With the old policy equal to the current one every ratio is 1 and the
/// normalized advantages average to zero.
#[test]
fn ppo_unit_ratio_gives_zero_policy_loss() {
    let agent = ppo_agent(Exploration::default_for(NoiseKind::Gsde, SampleInterval::Steps(4), -2.0), 2);
    let batch = ppo_batch(&agent, 3, 0.0);
    let l = agent.ppo_loss(&batch).unwrap();
    assert!(l.policy.abs() < 1e-12);
    assert_eq!(l.clip_fraction, 0.0);
}

/// For a linear policy with the state as features, a gSDE rollout equals a
/// rollout of the policy with weights `W + θ_εᵀ`, up to rounding.
#[test]
fn linear_gsde_equals_parameter_noise_up_to_rounding() {
    let spec = EnvSpec { id: EnvId::DoubleIntegrator, time_feature: false, history: false, horizon: None };
    let mut rng = gsde::Rng::seed_from_u64(17);
    let w = Matrix::from_vec(1, 2, vec![-0.8, -1.1]).unwrap();
    let policy = Mlp::from_layers(vec![Layer::new(w.clone(), vec![0.05], Activation::Identity).unwrap()]).unwrap();
    let mut dist = GsdeDistribution::new(2, 1, -1.0, SampleInterval::Episodic, VarianceTransform::Exp).unwrap();
    let (mut worst, mut scale): (f64, f64) = (0.0, 0.0);
    for episode in 0..100u64 {
        dist.resample(&mut rng);
        let mut perturbed = policy.clone();
        for i in 0..2 {
            let x = perturbed.layers()[0].weight.get(0, i) + dist.theta_eps().get(i, 0);
            perturbed.layers_mut()[0].weight.set(0, i, x);
        }
        let (mut a_env, mut b_env) = (spec.build(), spec.build());
        let (mut sa, mut sb) = (a_env.reset(episode), b_env.reset(episode));
        loop {
            let (z, mu) = policy.predict_one(&sa).unwrap();
            let a = dist.step_action(&mu, &z, &mut rng).unwrap();
            let b = perturbed.predict_one(&sb).unwrap().1;
            worst = worst.max((a[0] - b[0]).abs());
            scale = scale.max(b[0].abs());
            let (ra, rb) = (a_env.step(&a).unwrap(), b_env.step(&b).unwrap());
            sa = ra.observation;
            sb = rb.observation;
            if ra.truncated {
                break;
            }
        }
    }
    assert!(worst / scale < 1e-12, "relative deviation {}", worst / scale);
}

fn small_sac(exploration: Exploration) -> SacConfig {
    SacConfig { hidden: vec![16, 16], batch_size: 16, warmup_steps: 150, exploration, ..Default::default() }
}

#[test]
fn sac_training_is_deterministic_and_eval_does_not_perturb_it() {
    let spec = EnvSpec::new(EnvId::DoubleIntegrator);
    for kind in NoiseKind::ALL {
        let config = small_sac(Exploration::default_for(kind, SampleInterval::Steps(8), -3.0));
        let settings = RunSettings { total_steps: 450, eval_interval: 200, eval_episodes: 2, seed: 5 };
        let a = sac_train(&config, &spec, &settings).unwrap();
        let b = sac_train(&config, &spec, &settings).unwrap();
        assert_eq!(a.log, b.log, "{kind:?}");
        assert_eq!(a.agent, b.agent);
        let silent = sac_train(&config, &spec, &RunSettings { eval_episodes: 0, ..settings }).unwrap();
        assert_eq!(silent.agent, a.agent, "{kind:?}");
        let strip = |log: &TrainLog| log.rows.iter().map(|r| (r.timestep, r.episode_return)).collect::<Vec<_>>();
        assert_eq!(strip(&silent.log), strip(&a.log));
        assert_eq!(a.log.rows.last().unwrap().timestep, 450);
        assert!(a.log.rows.iter().filter(|r| r.eval.is_some()).count() >= 2);
    }
}

#[test]
fn sac_without_noise_and_long_warmup_acts_deterministically() {
    let spec = EnvSpec::new(EnvId::DoubleIntegrator);
    let config = SacConfig { warmup_steps: 10_000, ..small_sac(Exploration::None) };
    let out = sac_train(&config, &spec, &RunSettings { total_steps: 300, eval_interval: 0, eval_episodes: 0, seed: 1 }).unwrap();
    // every stored action is tanh(μ(s)) of the untouched actor
    for i in 0..out.replay.len() {
        let (s, a, ..) = out.replay.get(i).unwrap();
        let expected: Vec<f64> = out.agent.actor.predict_one(s).unwrap().1[..1].iter().map(|m| m.tanh()).collect();
        assert_eq!(a, expected.as_slice());
    }
}

#[test]
fn zero_budget_is_an_empty_log() {
    let spec = EnvSpec::new(EnvId::Pendulum);
    let settings = RunSettings { total_steps: 0, eval_interval: 10, eval_episodes: 1, seed: 0 };
    let out = sac_train(&small_sac(Exploration::None), &spec, &settings).unwrap();
    assert!(out.log.rows.is_empty());
}

fn small_ppo(workers: usize) -> PpoConfig {
    PpoConfig { n_workers: workers, n_steps: 64, n_epochs: 2, batch_size: 32, hidden: vec![16, 16], ..Default::default() }
}

#[test]
fn serial_and_parallel_collection_agree() {
    let spec = EnvSpec::new(EnvId::DoubleIntegrator);
    let config = small_ppo(4);
    let (mut a, mut wa, _) = ppo_setup(&config, &spec, 3).unwrap();
    let (mut b, mut wb, _) = ppo_setup(&config, &spec, 3).unwrap();
    for _ in 0..3 {
        let (ba, sa) = collect_rollout(&mut a, &mut wa, 150, false).unwrap();
        let (bb, sb) = collect_rollout(&mut b, &mut wb, 150, true).unwrap();
        assert_eq!(ba, bb);
        assert_eq!(sa, sb);
        assert_eq!(a.normalizer, b.normalizer);
        let noises: Vec<&Matrix> = ba.initial_noise.iter().map(|n| n.as_ref().unwrap()).collect();
        for i in 0..4 {
            for j in i + 1..4 {
                assert_ne!(noises[i], noises[j]);
            }
        }
    }
}

#[test]
fn ppo_training_is_deterministic() {
    let spec = EnvSpec::new(EnvId::DoubleIntegrator);
    let settings = RunSettings { total_steps: 1000, eval_interval: 500, eval_episodes: 2, seed: 9 };
    let a = ppo_train(&small_ppo(4), &spec, &settings).unwrap();
    let b = ppo_train(&small_ppo(4), &spec, &settings).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.agent, b.agent);
    assert_eq!(a.log.rows.last().unwrap().timestep, 1000);
    assert!(ppo_train(&small_ppo(3), &spec, &settings).is_err());
}

#[test]
fn ppo_rejects_off_policy_noise() {
    for kind in [NoiseKind::Ou, NoiseKind::Param, NoiseKind::None] {
        let config = PpoConfig { exploration: Exploration::default_for(kind, SampleInterval::Steps(4), -2.0), ..small_ppo(1) };
        let mut rng = gsde::Rng::seed_from_u64(0);
        assert!(PpoAgent::new(3, 1, config, &mut rng).is_err());
    }
}

#[test]
fn agents_round_trip_through_json() {
    let spec = EnvSpec::new(EnvId::Pendulum);
    let settings = RunSettings { total_steps: 300, eval_interval: 0, eval_episodes: 0, seed: 2 };
    let sac = sac_train(&small_sac(Exploration::default_for(NoiseKind::Gsde, SampleInterval::Steps(8), -3.0)), &spec, &settings).unwrap();
    let text = serde_json::to_string(&sac.agent).unwrap();
    let back: SacAgent = serde_json::from_str(&text).unwrap();
    assert_eq!(back, sac.agent);

    let ppo = ppo_train(&small_ppo(2), &spec, &RunSettings { total_steps: 256, ..settings }).unwrap();
    let text = serde_json::to_string(&ppo.agent).unwrap();
    let back: PpoAgent = serde_json::from_str(&text).unwrap();
    assert_eq!(back, ppo.agent);
    let streams = serde_json::to_string(&ppo.streams).unwrap();
    let mut restored: gsde::seeding::SeedStreams = serde_json::from_str(&streams).unwrap();
    let mut original = ppo.streams.clone();
    assert_eq!(restored.noise.random::<u64>(), original.noise.random::<u64>());
}

#[test]
fn rollout_records_time_limit_bootstrap() {
    let spec = EnvSpec { horizon: Some(10), ..EnvSpec::new(EnvId::DoubleIntegrator) };
    let config = PpoConfig { normalize_reward: false, normalize_obs: false, ..small_ppo(1) };
    let (mut agent, mut workers, _) = ppo_setup(&config, &spec, 0).unwrap();
    let (buffer, stats) = collect_rollout(&mut agent, &mut workers, 25, false).unwrap();
    assert_eq!(stats.episode_returns.len(), 2);
    for t in 0..25 {
        assert_eq!(buffer.dones[t] == 1.0, t == 9 || t == 19);
        if buffer.dones[t] == 0.0 {
            assert_eq!(buffer.rewards[t], buffer.raw_rewards[t]);
        } else {
            assert_ne!(buffer.rewards[t], buffer.raw_rewards[t]);
        }
    }
    let episode: f64 = buffer.raw_rewards[..10].iter().sum();
    assert!((episode - stats.episode_returns[0]).abs() < 1e-12);
}

#[test]
fn exploding_updates_report_divergence() {
    let spec = EnvSpec::new(EnvId::Pendulum);
    let config = SacConfig { learning_rate: 1e300, warmup_steps: 20, ..small_sac(Exploration::Gaussian { log_std_init: 0.0 }) };
    let settings = RunSettings { total_steps: 400, eval_interval: 0, eval_episodes: 0, seed: 0 };
    match sac_train(&config, &spec, &settings) {
        Err(gsde::Error::Diverged { timestep, .. }) => assert!(timestep > 20 && timestep <= 400),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.log.rows.len())),
    }
}
