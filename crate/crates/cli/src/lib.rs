//! Experiment runner: declarative configs, seeded training runs, CSV logs
//! and SVG plots.

pub mod commands;
pub mod config;
pub mod plot;
pub mod runlog;

pub use commands::{
    cmd_eval, cmd_sweep, cmd_sweep_in, cmd_train, cmd_train_in, output_root, run_dir, Checkpoint,
    SweepReport, TrainReport, OUTPUT_ROOT_VAR,
};
pub use config::{parse_config, serialize_config, AlgoConfig, ExperimentConfig, NoiseConfig};
pub use plot::{cmd_plot, PlotKind};
