//! Experiment configuration, FLOPs ledger, end-to-end runs and summaries.

pub mod config;
pub mod experiment;
pub mod flops;
pub mod summary;

use std::path::PathBuf;

use thiserror::Error;

use crate::data::DataError;

pub use config::{Arch, DatasetConfig, ExperimentConfig, KdSettings, Mode, NetworkConfig, PhaseConfigs, Splits};
pub use experiment::{run_experiment, run_id, run_seed, FlopsLedger, MetricsRecord, SCHEMA_VERSION};
pub use flops::{inference_flops, training_flops, training_flops_with, TRAIN_PASSES_PER_SAMPLE};
pub use summary::{read_records, selection_gap, summarize, write_summary, SummaryRow};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("dataset: {0}")]
    Data(#[from] DataError),
    #[error("{stage}: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("{}:{line}: {message}", path.display())]
    Record { path: PathBuf, line: usize, message: String },
    #[error("{} of {total} runs failed: {}", failed.len(), failed.join(", "))]
    RunsFailed { failed: Vec<String>, total: usize },
    #[error("mismatched runs: {0}")]
    Mismatch(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}
