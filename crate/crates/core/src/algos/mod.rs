//! SAC and PPO training loops with pluggable exploration.

pub mod normalize;
pub mod ppo;
pub mod replay;
pub mod sac;

use serde::{Deserialize, Serialize};

use crate::distributions::{SampleInterval, VarianceTransform};
use crate::error::shape_err;
use crate::exploration::NoiseKind;
use crate::metrics::EvalReport;
use crate::nn::Mlp;
use crate::{Error, Result};

pub use normalize::{Normalizer, RunningMeanStd};
pub use ppo::{
    collect_rollout, gae_compute, ppo_setup, ppo_train, ppo_train_with, PpoAgent, PpoBatch,
    PpoConfig, PpoGradients, PpoLosses, PpoNoise, PpoOutcome, RolloutBuffer, RolloutStats, Worker,
};
pub use replay::{Batch, ReplayBuffer};
pub use sac::{
    sac_critic_target, sac_train, sac_train_with, SacAgent, SacConfig, SacLosses, SacNoise,
};

/// Exploration strategy and its constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Exploration {
    None,
    /// Independent Gaussian noise at every step. PPO uses a state-independent
    /// `log_std` starting at `log_std_init`; SAC predicts it from the state.
    Gaussian {
        log_std_init: f64,
    },
    Ou {
        sigma: f64,
        theta: f64,
        dt: f64,
    },
    Param {
        initial_stddev: f64,
        target_distance: f64,
        adaptation_factor: f64,
    },
    Gsde {
        interval: SampleInterval,
        log_sigma_init: f64,
        transform: VarianceTransform,
    },
}

impl Exploration {
    pub fn kind(&self) -> NoiseKind {
        match self {
            Exploration::None => NoiseKind::None,
            Exploration::Gaussian { .. } => NoiseKind::Gaussian,
            Exploration::Ou { .. } => NoiseKind::Ou,
            Exploration::Param { .. } => NoiseKind::Param,
            Exploration::Gsde { .. } => NoiseKind::Gsde,
        }
    }

    /// Default constants for a noise kind.
    pub fn default_for(
        kind: NoiseKind,
        gsde_interval: SampleInterval,
        log_sigma_init: f64,
    ) -> Self {
        match kind {
            NoiseKind::None => Exploration::None,
            NoiseKind::Gaussian => Exploration::Gaussian { log_std_init: 0.0 },
            NoiseKind::Ou => Exploration::Ou {
                sigma: 0.2,
                theta: 0.15,
                dt: 1.0,
            },
            NoiseKind::Param => Exploration::Param {
                initial_stddev: 0.2,
                target_distance: 0.2,
                adaptation_factor: 1.01,
            },
            NoiseKind::Gsde => Exploration::Gsde {
                interval: gsde_interval,
                log_sigma_init,
                transform: VarianceTransform::Exp,
            },
        }
    }
}

/// Budget and evaluation schedule shared by both algorithms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub total_steps: u64,
    /// Evaluate at the first log row at or after every multiple of this;
    /// 0 disables periodic evaluation.
    pub eval_interval: u64,
    /// Episodes per evaluation; 0 disables evaluation entirely.
    pub eval_episodes: usize,
    pub seed: u64,
}

/// Scores of one evaluation point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub mean_return: f64,
    pub std_error: f64,
    pub continuity_cost: f64,
}

impl From<&EvalReport> for EvalPoint {
    fn from(r: &EvalReport) -> Self {
        Self {
            mean_return: r.mean_return,
            std_error: r.std_error,
            continuity_cost: r.mean_continuity_cost,
        }
    }
}

/// One row of the training log. SAC writes one per episode, PPO one per
/// rollout (episode columns then average the episodes finished in it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub timestep: u64,
    /// Episodes finished so far.
    pub episode: u64,
    pub episode_return: Option<f64>,
    pub episode_continuity_cost: Option<f64>,
    pub eval: Option<EvalPoint>,
    /// Whether the row covers warm-up steps taken before the policy acted.
    pub warmup: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    /// Mean train-time continuity cost over rows produced by the policy.
    /// Falls back to every row when the whole run was warm-up.
    pub fn train_continuity_cost(&self) -> Option<f64> {
        let pick = |warm: bool| -> Vec<f64> {
            self.rows
                .iter()
                .filter(|r| warm || !r.warmup)
                .filter_map(|r| r.episode_continuity_cost)
                .collect()
        };
        let mut costs = pick(false);
        if costs.is_empty() {
            costs = pick(true);
        }
        crate::metrics::mean_std_error(&costs).map(|(m, _)| m)
    }

    pub fn final_eval(&self) -> Option<EvalPoint> {
        self.rows.iter().rev().find_map(|r| r.eval)
    }
}

/// Decides when an evaluation is due.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct EvalSchedule {
    interval: u64,
    next: u64,
    total: u64,
    enabled: bool,
}

impl EvalSchedule {
    pub(crate) fn new(settings: &RunSettings) -> Self {
        Self {
            interval: settings.eval_interval,
            next: settings.eval_interval,
            total: settings.total_steps,
            enabled: settings.eval_episodes > 0,
        }
    }

    pub(crate) fn due(&mut self, timestep: u64) -> bool {
        if !self.enabled {
            return false;
        }
        let mut due = timestep >= self.total;
        if self.interval > 0 && timestep >= self.next {
            while self.next <= timestep {
                self.next += self.interval;
            }
            due = true;
        }
        due
    }
}

/// `target ← τ·online + (1 − τ)·target` for every parameter.
pub fn soft_update(online: &Mlp, target: &mut Mlp, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!(
            "tau must lie in [0, 1], got {tau}"
        )));
    }
    if online.param_shapes() != target.param_shapes() {
        return Err(shape_err(
            "soft_update",
            "matching architecture",
            "different",
        ));
    }
    for (t, o) in target
        .param_slices_mut()
        .into_iter()
        .zip(online.param_slices())
    {
        for (t, o) in t.iter_mut().zip(o) {
            *t = tau * o + (1.0 - tau) * *t;
        }
    }
    Ok(())
}
