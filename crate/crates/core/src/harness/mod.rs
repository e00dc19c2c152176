//! Evaluation harness: metrics, run configuration and the command bodies the
//! CLI dispatches to.

mod commands;
mod config;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::EpisodeResult;

pub use commands::{
    build_backend, cmd_build_memory, cmd_build_pool, cmd_collect, cmd_distill, cmd_eval, cmd_induce, cmd_metrics,
    load_tasks, read_results, report_path, run_tasks, write_results, EvalOutcome, InduceReport, METRICS_FILE,
    RESULTS_FILE,
};
pub use config::{
    BackendConfig, BackendKind, Config, DistillSettings, EvalSettings, InduceSettings, LoopOverrides, MemoryConfig,
    TaskSpec,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("no episode results to summarise")]
    EmptyInput,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {error}")]
    Io { path: String, error: std::io::Error },
    #[error("{path}: {error}")]
    Json { path: String, error: serde_json::Error },
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Backend(#[from] crate::backend::BackendError),
    #[error(transparent)]
    Bank(#[from] crate::feasibility::BankError),
    #[error(transparent)]
    Progress(#[from] crate::progress::ProgressError),
}

impl HarnessError {
    /// Errors detected before any work starts.
    pub fn is_config(&self) -> bool {
        matches!(self, HarnessError::Config(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub success_rate: f64,
    /// Invalid executed steps over all executed steps.
    pub invalid_action_rate: f64,
    pub avg_trajectory_length: f64,
    pub episodes: usize,
}

pub fn compute_metrics(results: &[EpisodeResult]) -> Result<MetricsReport, HarnessError> {
    if results.is_empty() {
        return Err(HarnessError::EmptyInput);
    }
    let n = results.len() as f64;
    let successes = results.iter().filter(|r| r.reward >= 1.0).count() as f64;
    let steps: usize = results.iter().map(|r| r.steps_taken).sum();
    let invalid: usize = results.iter().map(|r| r.invalid_steps).sum();
    Ok(MetricsReport {
        success_rate: successes / n,
        invalid_action_rate: if steps == 0 { 0.0 } else { invalid as f64 / steps as f64 },
        avg_trajectory_length: steps as f64 / n,
        episodes: results.len(),
    })
}
