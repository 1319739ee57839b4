//! Generalized state-dependent exploration (gSDE) for deep reinforcement learning.
//!
//! The crate bundles everything needed to train SAC and PPO agents with
//! gSDE and the classic exploration baselines on small continuous-control
//! tasks, and to measure the smoothness of the resulting action streams:
//!
//! - [`nn`]: dense networks with a recorded forward pass, reverse-mode
//!   gradients, a scalar autodiff tape and Adam.
//! - [`distributions`]: diagonal and squashed Gaussians and the gSDE
//!   distribution with `n`-step noise-matrix resampling.
//! - [`exploration`]: Ornstein-Uhlenbeck action noise and adaptive
//!   parameter-space noise.
//! - [`envs`]: pendulum swing-up, double integrator and observation wrappers.
//! - [`algos`]: SAC and PPO training loops.
//! - [`metrics`]: continuity cost, deterministic evaluation and Pareto
//!   aggregation.
//! - [`seeding`]: named, independent random streams derived from one seed.

pub mod algos;
pub mod distributions;
pub mod envs;
mod error;
pub mod exploration;
pub mod metrics;
pub mod nn;
pub mod seeding;

pub use error::{Error, Result};

/// Random number generator used throughout the crate.
///
/// ChaCha is portable and serializable, so checkpoints can carry rng state.
pub type Rng = rand_chacha::ChaCha8Rng;
