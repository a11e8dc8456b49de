//! Optimization loop, evaluation, metrics and checkpoints.

mod adam;
mod checkpoint;
mod config;
mod metrics;
mod run;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use config::TrainConfig;
pub use metrics::{append_metrics, parse_metrics, render_metrics, write_metrics, MetricsRecord, Phase, Split, METRICS_HEADER};
pub use run::{evaluate, evaluate_checkpoint, prepare, prepare_from_paths, train_run, Evaluation, PreparedData, RunOutcome};
