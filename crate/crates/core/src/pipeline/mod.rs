//! Staged end-to-end runs with on-disk checkpoints.

mod config;
pub mod plot;
mod report;
mod run;

pub use config::{
    derive_seed, DcaConfig, FilterStageConfig, FusionStageConfig, RunConfig, SplitConfig, StageToggles, OUT_DIR_ENV,
};
pub use report::{compare_manifests, write_comparison, write_dca, CompareRow};
pub use run::{run_pipeline, Stage};

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::BranchSummary;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("loading study failed: {0}")]
    Data(#[from] crate::data::DataError),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: Stage, message: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {reason}")]
    Artifact { path: String, reason: String },
}

pub(crate) fn fail<E: fmt::Display>(stage: Stage, e: E) -> PipelineError {
    PipelineError::Stage { stage, message: e.to_string() }
}

pub(crate) fn io_err(path: &Path) -> impl Fn(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub seconds: f64,
    /// Paths relative to the run directory.
    pub outputs: Vec<PathBuf>,
    /// Whether outputs came from an earlier run's checkpoint.
    pub reused: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub seed: u64,
    pub config: RunConfig,
    pub plan: String,
    /// Study-level outputs (split, cleaning, exclusions).
    pub artifacts: Vec<PathBuf>,
    pub stages: Vec<StageRecord>,
    pub branches: Vec<BranchSummary>,
    pub eval_report: Option<PathBuf>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text)
            .map_err(|e| PipelineError::Artifact { path: path.display().to_string(), reason: e.to_string() })
    }

    /// Every listed file, relative to the run directory.
    pub fn listed_files(&self) -> Vec<PathBuf> {
        let mut out = self.artifacts.clone();
        for s in &self.stages {
            out.extend(s.outputs.iter().cloned());
        }
        out
    }
}
