//! Named random streams.
//!
//! Every consumer of randomness (environment resets, network
//! initialization, exploration noise, evaluation) draws from its own stream,
//! seeded from a SHA-256 digest of the master seed and the stream name. Adding
//! draws to one stream never shifts another.

use rand::SeedableRng;
use sha2::{Digest, Sha256};

use crate::Rng;

pub const ENV: &str = "env";
pub const POLICY_INIT: &str = "policy-init";
pub const NOISE: &str = "noise";
pub const EVAL: &str = "eval";
pub const WARMUP: &str = "warmup";
pub const REPLAY: &str = "replay";

/// Independent stream for `(master, name)`.
pub fn stream(master: u64, name: &str) -> Rng {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(b"/");
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    Rng::from_seed(seed)
}

/// The standard training streams.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SeedStreams {
    pub env: Rng,
    pub policy_init: Rng,
    pub noise: Rng,
    pub eval: Rng,
    pub warmup: Rng,
    pub replay: Rng,
}

/// Derives the named streams used by a training run.
pub fn seed_streams(master: u64) -> SeedStreams {
    SeedStreams {
        env: stream(master, ENV),
        policy_init: stream(master, POLICY_INIT),
        noise: stream(master, NOISE),
        eval: stream(master, EVAL),
        warmup: stream(master, WARMUP),
        replay: stream(master, REPLAY),
    }
}
