use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gsde::algos::{ppo_train_with, sac_train_with, LogRow, PpoAgent, SacAgent, TrainLog};
use gsde::distributions::SampleInterval;
use gsde::exploration::NoiseKind;
use gsde::metrics::{aggregate_pareto, evaluate_policy, EvalReport, RunGroup, RunSummary};
use gsde::seeding::SeedStreams;
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{AlgoConfig, ExperimentConfig};
use crate::runlog::{write_pareto, ParetoRow, RunLogWriter};

/// Overrides the directory that relative `run.output_dir` paths resolve against.
pub const OUTPUT_ROOT_VAR: &str = "GSDE_OUTPUT_ROOT";

pub const CHECKPOINT_VERSION: u32 = 1;

pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algo", content = "state", rename_all = "lowercase")]
pub enum AgentState {
    Sac(SacAgent),
    Ppo(PpoAgent),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub seed: u64,
    pub timestep: u64,
    pub agent: AgentState,
    pub streams: SeedStreams,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string(self)?;
        text.push('\n');
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)
            .with_context(|| format!("parsing checkpoint {}", path.display()))?;
        if ckpt.version != CHECKPOINT_VERSION {
            bail!(
                "{}: checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                path.display(),
                ckpt.version
            );
        }
        Ok(ckpt)
    }
}

/// `<root>/<output_dir>/<label>/seed-<seed>`.
pub fn run_dir(root: &Path, config: &ExperimentConfig, label: &str, seed: u64) -> PathBuf {
    root.join(&config.run.output_dir)
        .join(label)
        .join(format!("seed-{seed}"))
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub dir: PathBuf,
    /// The training log, or why the run stopped.
    pub result: std::result::Result<TrainLog, String>,
}

impl SeedRun {
    pub fn summary(&self) -> Option<RunSummary> {
        let log = self.result.as_ref().ok()?;
        Some(RunSummary {
            final_return: log.final_eval()?.mean_return,
            train_continuity_cost: log.train_continuity_cost().unwrap_or(0.0),
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub label: String,
    pub runs: Vec<SeedRun>,
}

impl TrainReport {
    pub fn success(&self) -> bool {
        self.runs.iter().all(|r| r.result.is_ok())
    }
}

/// Trains one seed, streaming rows to `log.csv` and writing
/// `checkpoint.json` at the end. Divergence is reported in the result and
/// as a final log row; other failures are returned as errors.
pub fn train_seed(config: &ExperimentConfig, dir: &Path, seed: u64) -> Result<SeedRun> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut writer = RunLogWriter::create(&dir.join("log.csv"), config.run.wall_clock)?;
    let mut write_error = None;
    let mut on_row = |row: &LogRow| -> gsde::Result<()> {
        writer.write(row).map_err(|e| {
            let msg = format!("{e:#}");
            write_error = Some(e);
            gsde::Error::InvalidArgument(msg)
        })
    };
    let settings = config.settings(seed);
    let outcome = match &config.algo {
        AlgoConfig::Sac(_) => {
            let sac = config.sac_config().expect("sac");
            sac_train_with(&sac, &config.env, &settings, &mut on_row)
                .map(|o| (AgentState::Sac(o.agent), o.log, o.streams))
        }
        AlgoConfig::Ppo(_) => {
            let ppo = config.ppo_config().expect("ppo");
            ppo_train_with(&ppo, &config.env, &settings, &mut on_row)
                .map(|o| (AgentState::Ppo(o.agent), o.log, o.streams))
        }
    };
    if let Some(e) = write_error {
        return Err(e);
    }
    match outcome {
        Ok((agent, log, streams)) => {
            writer.into_inner()?;
            Checkpoint {
                version: CHECKPOINT_VERSION,
                seed,
                timestep: log.rows.last().map_or(0, |r| r.timestep),
                agent,
                streams,
            }
            .save(&dir.join("checkpoint.json"))?;
            Ok(SeedRun {
                seed,
                dir: dir.to_path_buf(),
                result: Ok(log),
            })
        }
        Err(gsde::Error::Diverged { timestep, what }) => {
            writer.write_diverged(timestep)?;
            writer.into_inner()?;
            let msg = format!("diverged at timestep {timestep}: {what}");
            log::error!("{}: {msg}", dir.display());
            Ok(SeedRun {
                seed,
                dir: dir.to_path_buf(),
                result: Err(msg),
            })
        }
        Err(e) => Err(e).with_context(|| format!("training {}", dir.display())),
    }
}

/// One run per configured seed under `root`.
pub fn cmd_train_in(config: &ExperimentConfig, root: &Path) -> Result<TrainReport> {
    config.validate()?;
    let label = config.label();
    let runs = config
        .run
        .seeds
        .par_iter()
        .map(|&seed| train_seed(config, &run_dir(root, config, &label, seed), seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainReport { label, runs })
}

pub fn cmd_train(config: &ExperimentConfig) -> Result<TrainReport> {
    cmd_train_in(config, &output_root())
}

/// Deterministic evaluation of a saved agent on the configured environment.
/// Episode seeds continue the checkpoint's evaluation stream.
pub fn cmd_eval(checkpoint: &Path, config: &ExperimentConfig) -> Result<EvalReport> {
    let ckpt = Checkpoint::load(checkpoint)?;
    if config.run.eval_episodes == 0 {
        bail!("run.eval_episodes: evaluation needs at least one episode");
    }
    let mut env = config.env.build();
    let seed = ckpt.streams.eval.clone().next_u64();
    let episodes = config.run.eval_episodes;
    let report = match (&ckpt.agent, &config.algo) {
        (AgentState::Sac(agent), AlgoConfig::Sac(_)) => {
            check_dims(agent.obs_dim, agent.action_dim, env.as_ref())?;
            evaluate_policy(agent, env.as_mut(), episodes, seed, ckpt.timestep)?
        }
        (AgentState::Ppo(agent), AlgoConfig::Ppo(_)) => {
            check_dims(agent.obs_dim, agent.action_dim, env.as_ref())?;
            evaluate_policy(agent, env.as_mut(), episodes, seed, ckpt.timestep)?
        }
        (_, algo) => bail!(
            "algo.name: checkpoint was not trained with {}",
            algo.name()
        ),
    };
    Ok(report)
}

fn check_dims(obs: usize, act: usize, env: &dyn gsde::envs::Env) -> Result<()> {
    if obs != env.observation_dim() || act != env.action_dim() {
        bail!(
            "env: checkpoint expects {obs} observations and {act} actions, environment has {} and {}",
            env.observation_dim(),
            env.action_dim()
        );
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub config: ExperimentConfig,
    pub report: TrainReport,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub cells: Vec<SweepCell>,
    pub pareto: Vec<ParetoRow>,
    pub pareto_path: PathBuf,
    pub warnings: Vec<String>,
}

impl SweepReport {
    pub fn success(&self) -> bool {
        self.warnings.is_empty()
    }
}

fn interval_key(i: SampleInterval) -> (u8, usize) {
    match i {
        SampleInterval::Steps(n) => (0, n),
        SampleInterval::Episodic => (1, 0),
    }
}

/// Sweep cells in output order: noise types as given, each gSDE entry
/// expanded over the intervals in ascending order. Other noise types take a
/// single cell.
pub fn sweep_cells(
    base: &ExperimentConfig,
    noises: &[NoiseKind],
    intervals: &[SampleInterval],
) -> Result<Vec<ExperimentConfig>> {
    if noises.is_empty() {
        bail!("sweep needs at least one noise type");
    }
    let mut sorted = intervals.to_vec();
    sorted.sort_by_key(|&i| interval_key(i));
    sorted.dedup();
    let mut seen = Vec::new();
    let mut cells = Vec::new();
    for &kind in noises {
        if seen.contains(&kind) {
            continue;
        }
        seen.push(kind);
        let mut cell = base.clone();
        cell.noise.kind = kind;
        cell.run.label = None;
        if kind == NoiseKind::Gsde {
            if sorted.is_empty() {
                cells.push(cell.clone());
            }
            for &interval in &sorted {
                let mut c = cell.clone();
                c.noise.interval = interval;
                cells.push(c);
            }
        } else {
            if !intervals.is_empty() {
                log::info!("{kind} noise ignores the interval axis");
            }
            cells.push(cell);
        }
    }
    for c in &cells {
        c.validate()?;
    }
    Ok(cells)
}

/// Trains every (cell, seed) pair, then aggregates the cells into
/// `<root>/<output_dir>/pareto.csv`. Failed runs are left out of the
/// aggregate and listed as warning rows.
pub fn cmd_sweep_in(
    base: &ExperimentConfig,
    noises: &[NoiseKind],
    intervals: &[SampleInterval],
    root: &Path,
) -> Result<SweepReport> {
    if base.run.eval_episodes == 0 {
        bail!("run.eval_episodes: a sweep needs evaluation to score runs");
    }
    let cells = sweep_cells(base, noises, intervals)?;
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| base.run.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(c, seed)| {
            let config = &cells[c];
            train_seed(config, &run_dir(root, config, &config.label(), seed), seed)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut runs = runs.into_iter();
    let mut out = Vec::new();
    let mut groups = Vec::new();
    let mut warnings = Vec::new();
    for config in cells {
        let label = config.label();
        let seed_runs: Vec<SeedRun> = runs.by_ref().take(base.run.seeds.len()).collect();
        let mut summaries = Vec::new();
        for run in &seed_runs {
            match (&run.result, run.summary()) {
                (Ok(_), Some(s)) => summaries.push(s),
                (Err(msg), _) => warnings.push(format!("{label}/seed-{}: {msg}", run.seed)),
                (Ok(_), None) => {
                    warnings.push(format!("{label}/seed-{}: no evaluation", run.seed))
                }
            }
        }
        if !summaries.is_empty() {
            let interval = match config.noise.kind {
                NoiseKind::Gsde => config.noise.interval.to_string(),
                _ => String::new(),
            };
            groups.push(RunGroup {
                label: label.clone(),
                interval,
                runs: summaries,
            });
        }
        out.push(SweepCell {
            report: TrainReport {
                label,
                runs: seed_runs,
            },
            config,
        });
    }
    let pareto: Vec<ParetoRow> = aggregate_pareto(&groups)?
        .into_iter()
        .map(|p| ParetoRow {
            label: p.label,
            interval: p.interval,
            mean_return: p.mean_return,
            se_return: p.se_return,
            mean_ctrain: p.mean_ctrain,
            se_ctrain: p.se_ctrain,
            n_seeds: p.n_seeds,
        })
        .collect();
    let dir = root.join(&base.run.output_dir);
    std::fs::create_dir_all(&dir)?;
    let pareto_path = dir.join("pareto.csv");
    write_pareto(&pareto_path, &pareto, &warnings)?;
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(SweepReport {
        cells: out,
        pareto,
        pareto_path,
        warnings,
    })
}

pub fn cmd_sweep(
    base: &ExperimentConfig,
    noises: &[NoiseKind],
    intervals: &[SampleInterval],
) -> Result<SweepReport> {
    cmd_sweep_in(base, noises, intervals, &output_root())
}
