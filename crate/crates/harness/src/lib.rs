//! Experiment harness: YAML configuration, in-process and distributed run
//! wiring, checkpoints, evaluation, metrics and score aggregation.

pub mod config;
mod error;
pub mod evaluate;
pub mod metrics;
pub mod roles;
pub mod run;
pub mod scores;
pub mod snapshot;

pub use config::{load_config, load_config_file, ExperimentConfig};
pub use error::{HarnessError, Result};
pub use evaluate::{evaluate, EvalReport};
pub use run::{run_experiment, LocalRun, RunOptions, RunOutcome};
pub use scores::{aggregate_scores, final_score, ScoreTable};
