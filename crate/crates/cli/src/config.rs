//! Experiment configuration: a TOML document with `env`, `algo`, `noise` and
//! `run` sections. Every key except `env.id` and `algo.name` is optional and
//! falls back to the defaults of the chosen algorithm.
//!
//! ```toml
//! [env]
//! id = "pendulum"
//!
//! [algo]
//! name = "sac"
//! learning_rate = 7.3e-4
//!
//! [noise]
//! type = "gsde"
//! interval = 8            # or "episodic"
//!
//! [run]
//! total_steps = 20000
//! seeds = [0, 1, 2]
//! ```

use std::fmt;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use gsde::algos::{Exploration, PpoConfig, RunSettings, SacConfig};
use gsde::distributions::{SampleInterval, VarianceTransform};
use gsde::envs::{EnvId, EnvSpec};
use gsde::exploration::NoiseKind;
use toml::{Table, Value};

#[derive(Debug, Clone, PartialEq)]
pub enum AlgoConfig {
    Sac(SacConfig),
    Ppo(PpoConfig),
}

impl AlgoConfig {
    pub fn name(&self) -> &'static str {
        match self {
            AlgoConfig::Sac(_) => "sac",
            AlgoConfig::Ppo(_) => "ppo",
        }
    }
}

/// Noise type plus the constants of every noise type, so that a sweep can
/// switch types without losing settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    pub interval: SampleInterval,
    pub log_sigma_init: f64,
    pub transform: VarianceTransform,
    pub log_std_init: f64,
    pub ou_sigma: f64,
    pub ou_theta: f64,
    pub ou_dt: f64,
    pub param_initial_stddev: f64,
    pub param_target_distance: f64,
    pub param_adaptation_factor: f64,
}

impl NoiseConfig {
    fn defaults(algo: &AlgoConfig) -> Self {
        let (kind, interval, log_sigma_init) = match algo {
            AlgoConfig::Sac(_) => (NoiseKind::Gsde, SampleInterval::Steps(8), -3.0),
            AlgoConfig::Ppo(_) => (NoiseKind::Gsde, SampleInterval::Steps(4), -2.0),
        };
        let Exploration::Ou { sigma, theta, dt } =
            Exploration::default_for(NoiseKind::Ou, interval, log_sigma_init)
        else {
            unreachable!()
        };
        let Exploration::Param {
            initial_stddev,
            target_distance,
            adaptation_factor,
        } = Exploration::default_for(NoiseKind::Param, interval, log_sigma_init)
        else {
            unreachable!()
        };
        Self {
            kind,
            interval,
            log_sigma_init,
            transform: VarianceTransform::Exp,
            log_std_init: 0.0,
            ou_sigma: sigma,
            ou_theta: theta,
            ou_dt: dt,
            param_initial_stddev: initial_stddev,
            param_target_distance: target_distance,
            param_adaptation_factor: adaptation_factor,
        }
    }

    pub fn exploration(&self) -> Exploration {
        match self.kind {
            NoiseKind::None => Exploration::None,
            NoiseKind::Gaussian => Exploration::Gaussian {
                log_std_init: self.log_std_init,
            },
            NoiseKind::Ou => Exploration::Ou {
                sigma: self.ou_sigma,
                theta: self.ou_theta,
                dt: self.ou_dt,
            },
            NoiseKind::Param => Exploration::Param {
                initial_stddev: self.param_initial_stddev,
                target_distance: self.param_target_distance,
                adaptation_factor: self.param_adaptation_factor,
            },
            NoiseKind::Gsde => Exploration::Gsde {
                interval: self.interval,
                log_sigma_init: self.log_sigma_init,
                transform: self.transform,
            },
        }
    }

    /// Directory and legend label: the noise type, plus the interval for gSDE.
    pub fn label(&self) -> String {
        match self.kind {
            NoiseKind::Gsde => format!("gsde-{}", self.interval),
            other => other.as_str().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub total_steps: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub seeds: Vec<u64>,
    /// Relative paths resolve against the output root.
    pub output_dir: String,
    /// Overrides the noise label as the run directory name.
    pub label: Option<String>,
    /// Record elapsed seconds in the log. Off by default because it makes
    /// logs differ between otherwise identical runs.
    pub wall_clock: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            total_steps: 50_000,
            eval_interval: 10_000,
            eval_episodes: 20,
            seeds: vec![0],
            output_dir: "runs".into(),
            label: None,
            wall_clock: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    pub algo: AlgoConfig,
    pub noise: NoiseConfig,
    pub run: RunConfig,
}

impl ExperimentConfig {
    /// Defaults for an algorithm (`"sac"` or `"ppo"`) on an environment.
    pub fn new(env: EnvId, algo: &str) -> Result<Self> {
        let algo = match algo {
            "sac" => AlgoConfig::Sac(SacConfig::default()),
            "ppo" => AlgoConfig::Ppo(PpoConfig::default()),
            other => bail!("algo.name: expected \"sac\" or \"ppo\", got {other:?}"),
        };
        Ok(Self {
            env: EnvSpec::new(env),
            noise: NoiseConfig::defaults(&algo),
            algo,
            run: RunConfig::default(),
        })
    }

    pub fn label(&self) -> String {
        self.run.label.clone().unwrap_or_else(|| self.noise.label())
    }

    pub fn settings(&self, seed: u64) -> RunSettings {
        RunSettings {
            total_steps: self.run.total_steps,
            eval_interval: self.run.eval_interval,
            eval_episodes: self.run.eval_episodes,
            seed,
        }
    }

    pub fn sac_config(&self) -> Option<SacConfig> {
        match &self.algo {
            AlgoConfig::Sac(c) => Some(SacConfig {
                exploration: self.noise.exploration(),
                ..c.clone()
            }),
            AlgoConfig::Ppo(_) => None,
        }
    }

    pub fn ppo_config(&self) -> Option<PpoConfig> {
        match &self.algo {
            AlgoConfig::Ppo(c) => Some(PpoConfig {
                exploration: self.noise.exploration(),
                ..c.clone()
            }),
            AlgoConfig::Sac(_) => None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        parse_config(&text).with_context(|| format!("in config {}", path.display()))
    }

    /// Checks the constraints that do not depend on how the config was built.
    pub fn validate(&self) -> Result<()> {
        if self.noise.interval == SampleInterval::Steps(0) {
            bail!("noise.interval: gsde interval must be >= 1");
        }
        if self.run.seeds.is_empty() {
            bail!("run.seeds: seed list must not be empty");
        }
        // TOML integers are signed 64-bit
        if self.run.seeds.iter().any(|&s| s > i64::MAX as u64) {
            bail!("run.seeds: seeds must be below 2^63");
        }
        match &self.algo {
            AlgoConfig::Sac(c) => {
                unit_interval("algo.gamma", c.gamma)?;
                unit_interval("algo.tau", c.tau)?;
                positive("algo.learning_rate", c.learning_rate)?;
                positive("algo.mean_clip", c.mean_clip)?;
                nonzero("algo.batch_size", c.batch_size)?;
                nonzero("algo.buffer_size", c.buffer_size)?;
                hidden_ok(&c.hidden)?;
            }
            AlgoConfig::Ppo(c) => {
                unit_interval("algo.gamma", c.gamma)?;
                unit_interval("algo.gae_lambda", c.gae_lambda)?;
                positive("algo.clip_range", c.clip_range)?;
                positive("algo.learning_rate", c.learning_rate)?;
                positive("algo.max_grad_norm", c.max_grad_norm)?;
                positive("algo.norm_clip", c.norm_clip)?;
                nonzero("algo.n_workers", c.n_workers)?;
                nonzero("algo.n_steps", c.n_steps)?;
                nonzero("algo.n_epochs", c.n_epochs)?;
                nonzero("algo.batch_size", c.batch_size)?;
                hidden_ok(&c.hidden)?;
                if !matches!(self.noise.kind, NoiseKind::Gaussian | NoiseKind::Gsde) {
                    bail!(
                        "noise.type: ppo supports gaussian and gsde noise, got {}",
                        self.noise.kind
                    );
                }
                if self.run.total_steps % c.n_workers as u64 != 0 {
                    bail!(
                        "run.total_steps: {} is not a multiple of algo.n_workers = {}",
                        self.run.total_steps,
                        c.n_workers
                    );
                }
            }
        }
        if let Some(h) = self.env.horizon {
            nonzero("env.horizon", h)?;
        }
        Ok(())
    }
}

impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_config(self))
    }
}

fn unit_interval(key: &str, x: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&x) {
        bail!("{key}: must lie in [0, 1], got {x}");
    }
    Ok(())
}

fn positive(key: &str, x: f64) -> Result<()> {
    if !(x > 0.0 && x.is_finite()) {
        bail!("{key}: must be positive, got {x}");
    }
    Ok(())
}

fn nonzero(key: &str, x: usize) -> Result<()> {
    if x == 0 {
        bail!("{key}: must be at least 1");
    }
    Ok(())
}

fn hidden_ok(hidden: &[usize]) -> Result<()> {
    if hidden.contains(&0) {
        bail!("algo.hidden: layer widths must be at least 1");
    }
    Ok(())
}

/// Pops typed values out of one section and reports what is left over.
struct Section {
    name: &'static str,
    table: Table,
}

impl Section {
    fn take(root: &mut Table, name: &'static str) -> Result<Self> {
        let table = match root.remove(name) {
            None => Table::new(),
            Some(Value::Table(t)) => t,
            Some(other) => bail!("{name}: expected a table, got {}", other.type_str()),
        };
        Ok(Self { name, table })
    }

    fn key(&self, key: &str) -> String {
        format!("{}.{key}", self.name)
    }

    fn raw(&mut self, key: &str) -> Option<Value> {
        self.table.remove(key)
    }

    fn mismatch<T>(&self, key: &str, expected: &str, got: &Value) -> Result<T> {
        Err(anyhow!(
            "{}: expected {expected}, got {} {got}",
            self.key(key),
            got.type_str()
        ))
    }

    fn f64(&mut self, key: &str, slot: &mut f64) -> Result<()> {
        match self.raw(key) {
            None => {}
            Some(Value::Float(x)) => *slot = x,
            Some(Value::Integer(i)) => *slot = i as f64,
            Some(v) => return self.mismatch(key, "a number", &v),
        }
        Ok(())
    }

    fn u64(&mut self, key: &str, slot: &mut u64) -> Result<()> {
        match self.raw(key) {
            None => {}
            Some(Value::Integer(i)) if i >= 0 => *slot = i as u64,
            Some(v) => return self.mismatch(key, "a non-negative integer", &v),
        }
        Ok(())
    }

    fn usize(&mut self, key: &str, slot: &mut usize) -> Result<()> {
        let mut x = *slot as u64;
        self.u64(key, &mut x)?;
        *slot = x as usize;
        Ok(())
    }

    fn bool(&mut self, key: &str, slot: &mut bool) -> Result<()> {
        match self.raw(key) {
            None => {}
            Some(Value::Boolean(b)) => *slot = b,
            Some(v) => return self.mismatch(key, "a boolean", &v),
        }
        Ok(())
    }

    fn string(&mut self, key: &str) -> Result<Option<String>> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(v) => self.mismatch(key, "a string", &v),
        }
    }

    fn u64_list(&mut self, key: &str) -> Result<Option<Vec<u64>>> {
        let Some(v) = self.raw(key) else {
            return Ok(None);
        };
        let Value::Array(items) = &v else {
            return self.mismatch(key, "an array of integers", &v);
        };
        let mut out = Vec::with_capacity(items.len());
        for item in items {
            match item {
                Value::Integer(i) if *i >= 0 => out.push(*i as u64),
                _ => return self.mismatch(key, "an array of non-negative integers", &v),
            }
        }
        Ok(Some(out))
    }

    fn parsed<T: std::str::FromStr>(&mut self, key: &str, slot: &mut T) -> Result<()>
    where
        T::Err: fmt::Display,
    {
        if let Some(s) = self.string(key)? {
            *slot = s
                .parse()
                .map_err(|e: T::Err| anyhow!("{}: {e}", self.key(key)))?;
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        if let Some(key) = self.table.keys().next() {
            bail!("{}.{key}: unknown key", self.name);
        }
        Ok(())
    }
}

/// Parses a TOML experiment description, filling unspecified keys with the
/// chosen algorithm's defaults. Errors name the offending key.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut root: Table = text.parse().context("malformed TOML")?;
    let mut env = Section::take(&mut root, "env")?;
    let mut algo = Section::take(&mut root, "algo")?;
    let mut noise = Section::take(&mut root, "noise")?;
    let mut run = Section::take(&mut root, "run")?;
    if let Some(key) = root.keys().next() {
        bail!("{key}: unknown section");
    }

    let id: EnvId = env
        .string("id")?
        .ok_or_else(|| anyhow!("env.id: missing"))?
        .parse()
        .map_err(|e| anyhow!("env.id: {e}"))?;
    let name = algo
        .string("name")?
        .ok_or_else(|| anyhow!("algo.name: missing"))?;
    let mut config = ExperimentConfig::new(id, &name)?;

    env.bool("time_feature", &mut config.env.time_feature)?;
    env.bool("history", &mut config.env.history)?;
    if env.table.contains_key("horizon") {
        let mut h = 0;
        env.usize("horizon", &mut h)?;
        config.env.horizon = Some(h);
    }
    env.finish()?;

    match &mut config.algo {
        AlgoConfig::Sac(c) => {
            algo.f64("gamma", &mut c.gamma)?;
            algo.f64("tau", &mut c.tau)?;
            algo.f64("learning_rate", &mut c.learning_rate)?;
            algo.usize("buffer_size", &mut c.buffer_size)?;
            algo.usize("batch_size", &mut c.batch_size)?;
            algo.u64("warmup_steps", &mut c.warmup_steps)?;
            algo.f64("mean_clip", &mut c.mean_clip)?;
            if algo.table.contains_key("target_entropy") {
                let mut h = 0.0;
                algo.f64("target_entropy", &mut h)?;
                c.target_entropy = Some(h);
            }
            if let Some(h) = algo.u64_list("hidden")? {
                c.hidden = h.into_iter().map(|x| x as usize).collect();
            }
        }
        AlgoConfig::Ppo(c) => {
            algo.f64("gamma", &mut c.gamma)?;
            algo.f64("gae_lambda", &mut c.gae_lambda)?;
            algo.f64("clip_range", &mut c.clip_range)?;
            algo.usize("n_workers", &mut c.n_workers)?;
            algo.usize("n_steps", &mut c.n_steps)?;
            algo.usize("n_epochs", &mut c.n_epochs)?;
            algo.usize("batch_size", &mut c.batch_size)?;
            algo.f64("learning_rate", &mut c.learning_rate)?;
            algo.f64("vf_coef", &mut c.vf_coef)?;
            algo.f64("ent_coef", &mut c.ent_coef)?;
            algo.f64("max_grad_norm", &mut c.max_grad_norm)?;
            algo.bool("normalize_obs", &mut c.normalize_obs)?;
            algo.bool("normalize_reward", &mut c.normalize_reward)?;
            algo.f64("norm_clip", &mut c.norm_clip)?;
            if let Some(h) = algo.u64_list("hidden")? {
                c.hidden = h.into_iter().map(|x| x as usize).collect();
            }
        }
    }
    algo.finish()?;

    let n = &mut config.noise;
    noise.parsed("type", &mut n.kind)?;
    match noise.raw("interval") {
        None => {}
        Some(Value::Integer(i)) if i >= 0 => {
            n.interval = i
                .to_string()
                .parse()
                .map_err(|e| anyhow!("noise.interval: {e}"))?;
        }
        Some(Value::String(s)) => {
            n.interval = s.parse().map_err(|e| anyhow!("noise.interval: {e}"))?;
        }
        Some(v) => return noise.mismatch("interval", "a positive integer or \"episodic\"", &v),
    }
    noise.f64("log_sigma_init", &mut n.log_sigma_init)?;
    if let Some(t) = noise.string("transform")? {
        n.transform = match t.as_str() {
            "exp" => VarianceTransform::Exp,
            "expln" => VarianceTransform::Expln,
            other => bail!("noise.transform: expected \"exp\" or \"expln\", got {other:?}"),
        };
    }
    noise.f64("log_std_init", &mut n.log_std_init)?;
    noise.f64("ou_sigma", &mut n.ou_sigma)?;
    noise.f64("ou_theta", &mut n.ou_theta)?;
    noise.f64("ou_dt", &mut n.ou_dt)?;
    noise.f64("param_initial_stddev", &mut n.param_initial_stddev)?;
    noise.f64("param_target_distance", &mut n.param_target_distance)?;
    noise.f64("param_adaptation_factor", &mut n.param_adaptation_factor)?;
    noise.finish()?;

    let r = &mut config.run;
    run.u64("total_steps", &mut r.total_steps)?;
    run.u64("eval_interval", &mut r.eval_interval)?;
    run.usize("eval_episodes", &mut r.eval_episodes)?;
    if let Some(seeds) = run.u64_list("seeds")? {
        r.seeds = seeds;
    }
    if let Some(dir) = run.string("output_dir")? {
        r.output_dir = dir;
    }
    r.label = run.string("label")?;
    run.bool("wall_clock", &mut r.wall_clock)?;
    run.finish()?;

    config.validate()?;
    Ok(config)
}

fn int(x: impl TryInto<i64>) -> Value {
    Value::Integer(x.try_into().unwrap_or(i64::MAX))
}

fn hidden_value(hidden: &[usize]) -> Value {
    Value::Array(hidden.iter().map(|&h| int(h)).collect())
}

/// Writes every key explicitly, so the output does not depend on defaults.
pub fn serialize_config(config: &ExperimentConfig) -> String {
    let mut env = Table::new();
    env.insert("id".into(), config.env.id.as_str().into());
    env.insert("time_feature".into(), config.env.time_feature.into());
    env.insert("history".into(), config.env.history.into());
    if let Some(h) = config.env.horizon {
        env.insert("horizon".into(), int(h));
    }

    let mut algo = Table::new();
    algo.insert("name".into(), config.algo.name().into());
    match &config.algo {
        AlgoConfig::Sac(c) => {
            algo.insert("gamma".into(), c.gamma.into());
            algo.insert("tau".into(), c.tau.into());
            algo.insert("learning_rate".into(), c.learning_rate.into());
            algo.insert("buffer_size".into(), int(c.buffer_size));
            algo.insert("batch_size".into(), int(c.batch_size));
            algo.insert("warmup_steps".into(), int(c.warmup_steps));
            algo.insert("mean_clip".into(), c.mean_clip.into());
            if let Some(h) = c.target_entropy {
                algo.insert("target_entropy".into(), h.into());
            }
            algo.insert("hidden".into(), hidden_value(&c.hidden));
        }
        AlgoConfig::Ppo(c) => {
            algo.insert("gamma".into(), c.gamma.into());
            algo.insert("gae_lambda".into(), c.gae_lambda.into());
            algo.insert("clip_range".into(), c.clip_range.into());
            algo.insert("n_workers".into(), int(c.n_workers));
            algo.insert("n_steps".into(), int(c.n_steps));
            algo.insert("n_epochs".into(), int(c.n_epochs));
            algo.insert("batch_size".into(), int(c.batch_size));
            algo.insert("learning_rate".into(), c.learning_rate.into());
            algo.insert("vf_coef".into(), c.vf_coef.into());
            algo.insert("ent_coef".into(), c.ent_coef.into());
            algo.insert("max_grad_norm".into(), c.max_grad_norm.into());
            algo.insert("normalize_obs".into(), c.normalize_obs.into());
            algo.insert("normalize_reward".into(), c.normalize_reward.into());
            algo.insert("norm_clip".into(), c.norm_clip.into());
            algo.insert("hidden".into(), hidden_value(&c.hidden));
        }
    }

    let n = &config.noise;
    let mut noise = Table::new();
    noise.insert("type".into(), n.kind.as_str().into());
    noise.insert(
        "interval".into(),
        match n.interval {
            SampleInterval::Steps(k) => int(k),
            SampleInterval::Episodic => "episodic".into(),
        },
    );
    noise.insert("log_sigma_init".into(), n.log_sigma_init.into());
    let transform = match n.transform {
        VarianceTransform::Exp => "exp",
        VarianceTransform::Expln => "expln",
    };
    noise.insert("transform".into(), transform.into());
    noise.insert("log_std_init".into(), n.log_std_init.into());
    noise.insert("ou_sigma".into(), n.ou_sigma.into());
    noise.insert("ou_theta".into(), n.ou_theta.into());
    noise.insert("ou_dt".into(), n.ou_dt.into());
    noise.insert("param_initial_stddev".into(), n.param_initial_stddev.into());
    noise.insert(
        "param_target_distance".into(),
        n.param_target_distance.into(),
    );
    noise.insert(
        "param_adaptation_factor".into(),
        n.param_adaptation_factor.into(),
    );

    let r = &config.run;
    let mut run = Table::new();
    run.insert("total_steps".into(), int(r.total_steps));
    run.insert("eval_interval".into(), int(r.eval_interval));
    run.insert("eval_episodes".into(), int(r.eval_episodes));
    run.insert(
        "seeds".into(),
        Value::Array(r.seeds.iter().map(|&s| int(s)).collect()),
    );
    run.insert("output_dir".into(), r.output_dir.clone().into());
    if let Some(label) = &r.label {
        run.insert("label".into(), label.clone().into());
    }
    run.insert("wall_clock".into(), r.wall_clock.into());

    let mut root = Table::new();
    root.insert("env".into(), Value::Table(env));
    root.insert("algo".into(), Value::Table(algo));
    root.insert("noise".into(), Value::Table(noise));
    root.insert("run".into(), Value::Table(run));
    toml::to_string(&root).expect("config tables always serialize")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_sac_uses_table_defaults() {
        let c = parse_config("[env]\nid = \"pendulum\"\n[algo]\nname = \"sac\"\n").unwrap();
        let AlgoConfig::Sac(sac) = &c.algo else {
            panic!()
        };
        assert_eq!(sac.gamma, 0.98);
        assert_eq!(c.noise.kind, NoiseKind::Gsde);
        assert_eq!(c.noise.interval, SampleInterval::Steps(8));
        assert_eq!(c.label(), "gsde-8");
    }

    #[test]
    fn unknown_and_foreign_keys_are_named() {
        let err = parse_config("[env]\nid = \"pendulum\"\n[algo]\nname = \"sac\"\ngae_lambda = 0.9\n")
            .unwrap_err();
        assert!(format!("{err:#}").contains("algo.gae_lambda"));
        let err = parse_config("[env]\nid = \"pendulum\"\ncolour = 1\n[algo]\nname = \"sac\"\n")
            .unwrap_err();
        assert!(format!("{err:#}").contains("env.colour"));
    }
}
