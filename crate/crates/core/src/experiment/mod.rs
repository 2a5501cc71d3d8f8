//! Experiment orchestration: configuration, runs, ablations and reports.
//!
//! Every artifact lands in one output directory. Apart from the loaded
//! dataset or graph file, nothing outside that directory is read or written.

mod config;
mod planted;
mod run;

pub use config::{
    DatasetSpec, ExperimentConfig, PartitionScheme, PartitionSpec, SbmSpec, TheorySettings,
};
pub use planted::{two_regime_federation, BlockProbs, TwoRegimeSpec};
pub use run::{
    ablate, diagnose, partition, report, run, synth, AblationRow, Checkpoint, ClientCheckpoint,
    ContractionSummary, DiagnoseReport, KlAuditCluster, LipschitzCheck, Report, RoundSummary,
    RunOptions, RunSummary, SeedState, ABLATION_FILE, CHECKPOINT_FILE, CLUSTERS_FILE, DIAGNOSE_FILE,
    DIAGNOSTICS_FILE, DISTANCES_FILE, METRICS_FILE, SUMMARY_FILE, UPLOADS_FILE,
};

use crate::federation::FederationError;
use crate::graphs::GraphError;
use crate::theory::TheoryError;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Divergence(FederationError),
    #[error(transparent)]
    Federation(FederationError),
    #[error(transparent)]
    Graph(GraphError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {detail}")]
    Artifact { path: PathBuf, detail: String },
    #[error("contract violated: {0}")]
    Contract(String),
}

impl ExperimentError {
    /// Process exit code: 2 for configuration problems, 3 for divergence,
    /// 1 for anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 2,
            ExperimentError::Divergence(_) => 3,
            _ => 1,
        }
    }
}

impl From<FederationError> for ExperimentError {
    fn from(e: FederationError) -> Self {
        match e {
            FederationError::Config(m) => ExperimentError::Config(m),
            e @ FederationError::Divergence { .. } => ExperimentError::Divergence(e),
            e => ExperimentError::Federation(e),
        }
    }
}

impl From<GraphError> for ExperimentError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::Config(_) | GraphError::Infeasible(_) => ExperimentError::Config(e.to_string()),
            e => ExperimentError::Graph(e),
        }
    }
}
