//! Pipeline wiring for the `semvox` binary: configuration, the synthetic
//! scene generator and the subcommand implementations.

pub mod commands;
pub mod config;
pub mod synth;

pub use commands::{
    cmd_build_map, cmd_eval_traj, cmd_export, cmd_synth, BuildReport, CliError, ExportFormat,
    SynthReport,
};
pub use config::{BuildOverrides, ConfigFile, EvalConfig, EvalOverrides, RunConfig};
pub use synth::{score_agreement, SceneSpec};
