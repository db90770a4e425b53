//! Experiment runner: prediction caching, condition synthesis, evaluation,
//! sensitivity analysis, listening-test export and the listening-test server.

pub mod commands;
pub mod config;
pub mod remote;
pub mod server;

use prosogap::mushra::MushraError;
use prosogap::pipeline::PipelineError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Mushra(#[from] MushraError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// How a command finished when it did not fail outright.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Clean,
    /// Some items were skipped and logged to `errors.jsonl`.
    Partial,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Clean => 0,
            Outcome::Partial => 1,
        }
    }
}

pub const FATAL_EXIT: i32 = 2;
