use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use gsde::distributions::SampleInterval;
use gsde::exploration::NoiseKind;
use gsde_cli::{cmd_eval, cmd_plot, cmd_sweep, cmd_train, ExperimentConfig, PlotKind};

#[derive(Parser)]
#[command(name = "gsde", version, about = "Train, evaluate and compare exploration noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run per configured seed.
    Train { config: PathBuf },
    /// Evaluate a checkpoint with the deterministic policy.
    Eval { checkpoint: PathBuf, config: PathBuf },
    /// Train every noise type / interval combination and write pareto.csv.
    Sweep {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        noise: Vec<NoiseKind>,
        #[arg(long, value_delimiter = ',')]
        intervals: Vec<SampleInterval>,
    },
    /// Plot learning curves from run logs or a scatter from pareto tables.
    Plot {
        kind: PlotKind,
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train { config } => {
            let config = ExperimentConfig::load(&config)?;
            let report = cmd_train(&config)?;
            for r in &report.runs {
                match &r.result {
                    Ok(log) => println!(
                        "{} seed {}: {} rows -> {}",
                        report.label,
                        r.seed,
                        log.rows.len(),
                        r.dir.display()
                    ),
                    Err(msg) => eprintln!("{} seed {}: {msg}", report.label, r.seed),
                }
            }
            Ok(report.success())
        }
        Command::Eval { checkpoint, config } => {
            let config = ExperimentConfig::load(&config)?;
            let r = cmd_eval(&checkpoint, &config)?;
            println!(
                "return {} +/- {} over {} episodes, continuity cost {}",
                r.mean_return, r.std_error, r.episodes, r.mean_continuity_cost
            );
            Ok(true)
        }
        Command::Sweep {
            config,
            noise,
            intervals,
        } => {
            let config = ExperimentConfig::load(&config)?;
            let report = cmd_sweep(&config, &noise, &intervals)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            println!("{}", report.pareto_path.display());
            Ok(report.success())
        }
        Command::Plot { kind, csv, output } => {
            cmd_plot(kind, &csv, &output)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
