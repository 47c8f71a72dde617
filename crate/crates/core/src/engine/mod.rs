//! The labeling loop, grid campaigns, checkpoints and reporting.

pub mod checkpoint;
pub mod config;
pub mod grid;
pub mod report;
pub mod result;
pub mod run;

use thiserror::Error;

use crate::annotation::AnnotationError;
use crate::corpus::CorpusError;
use crate::metrics::EvalError;
use crate::model::AdapterError;
use crate::strategies::StrategyError;

pub use config::{is_valid_run_id, ConfigError, DataConfig, GridSpec, HlMode, RunConfig, TrainingConfig};
pub use grid::{expand_grid, run_grid, GridOutcome, GridPlan, ModelFactory, TrainingRun};
pub use report::{report_best_dropout, BestRule, ReportedRow};
pub use result::{ExperimentResult, IterationRecord, PhaseTimings, ResultRecord, ResultsStore};
pub use run::{run_experiment, NoHooks, RunContext, RunHooks, RunOptions, RunOutcome};

/// Environment variable naming the checkpoint root; `./runs` by default.
pub const RUNS_DIR_ENV: &str = "SUMLOOP_RUNS_DIR";

pub fn default_runs_root() -> std::path::PathBuf {
    std::env::var_os(RUNS_DIR_ENV)
        .map(Into::into)
        .unwrap_or_else(|| "runs".into())
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("run {run_id}, iteration {iteration}: {source}")]
    Adapter {
        run_id: String,
        iteration: u32,
        #[source]
        source: AdapterError,
    },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error("test sample {0:?} also appears in the training corpus")]
    Overlap(String),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
