//! Experiment orchestration: configuration files, the training loop,
//! evaluation and checkpoints.

mod checkpoint;
mod config;
mod eval;
mod run;

pub use checkpoint::{
    load_checkpoint, read_model, read_optim, save_checkpoint, write_model, write_optim, Checkpoint,
    Tensor, MAGIC,
};
pub use config::{
    parse_config, ExperimentConfig, Metric, NonlinKind, SpectrumChoice, TaskKind, Threshold,
    TransitionChoice, CONFIG_KEYS,
};
pub use eval::{accumulate, evaluate, EvalTotals};
pub use run::{
    config_from_checkpoint, default_output_dir, resume_experiment, run_experiment, MetricsRow,
    RunSummary, StopReason, TaskSetup, Trainer,
};
