use std::path::{Path, PathBuf};

use ietp_core::model::Variant;
use serde::{Deserialize, Serialize};

use crate::config::{Config, Seeds};
use crate::{CliError, Prepared, MANIFEST_FILE};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LearnerEntry {
    pub index: usize,
    /// Relative to the run directory.
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainFailure {
    pub index: usize,
    pub error: String,
}

/// `manifest.json` of a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub dataset_fingerprint: String,
    pub data_dir: PathBuf,
    pub seeds: Seeds,
    pub variant: Variant,
    /// Number of bootstrap sets, hence of learners the run should hold.
    pub requested: usize,
    pub learners: Vec<LearnerEntry>,
    pub failures: Vec<TrainFailure>,
}

impl RunManifest {
    pub(crate) fn new(cfg: &Config, prepared: &Prepared, seeds: Seeds) -> Self {
        let data_dir = std::fs::canonicalize(&prepared.dir).unwrap_or_else(|_| prepared.dir.clone());
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: cfg.hash(),
            dataset_fingerprint: prepared.report.dataset_fingerprint.clone(),
            data_dir,
            seeds,
            variant: cfg.variant,
            requested: prepared.sets.len(),
            learners: Vec::new(),
            failures: Vec::new(),
        }
    }

    /// Writes `manifest.json` after checking that every listed file exists.
    pub(crate) fn write(&self, run: &Path) -> Result<(), CliError> {
        if let Some(e) = self.learners.iter().find(|e| !run.join(&e.path).exists()) {
            return Err(CliError::runtime(format!(
                "learner {}: {} missing at manifest write",
                e.index,
                e.path.display()
            )));
        }
        crate::write_json(&run.join(MANIFEST_FILE), self)
    }
}
