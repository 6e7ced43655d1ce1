//! Experiment configuration, persistence and the commands behind the `degm` binary.

mod checkpoint;
mod commands;
mod config;

pub use checkpoint::{load_checkpoint, save_checkpoint, Model, FORMAT_VERSION};
pub use commands::{
    cmd_diagnose, cmd_eval, cmd_export_v, cmd_train, gen_synthetic, run_ablation, run_config, AblationColumn, AblationTable,
    MetricMeans, RunOutcome, Summary, CHECKPOINT_DIR, CONFIG_FILE,
};
pub use config::{load_config, parse_config, Ablation, ExperimentConfig, Mode, DEGM1_EPOCHS};
