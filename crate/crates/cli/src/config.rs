use std::path::{Path, PathBuf};

use hierlogic::io::Format;
use hierlogic::rules::LossConfig;
use hierlogic::trainer::{CorruptionSpec, SyntheticSpec, TrainConfig};
use hierlogic::{fixtures, Hierarchy, InferenceConfig, PeerScope};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Everything one invocation depends on. Printed by `--print-config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// A hierarchy file, or the name of a bundled hierarchy.
    pub hierarchy: String,
    pub peer_scope: PeerScope,
    pub scores: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub format: Format,
    /// Fuzzy operators, alpha and loss toggles for `loss`.
    pub loss: LossConfig,
    pub inference: InferenceConfig,
    pub train: TrainConfig,
    /// Dataset for `train-demo`.
    pub synthetic: SyntheticSpec,
    /// Score maps written by `gen-data`.
    pub corruption: CorruptionSpec,
    pub seed: u64,
    pub threads: Option<usize>,
    /// Log filter taken from `HIERLOGIC_LOG`.
    pub verbosity: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            hierarchy: "cityscapes".into(),
            peer_scope: PeerScope::Level,
            scores: None,
            labels: None,
            out: None,
            format: Format::Binary,
            loss: LossConfig::default(),
            inference: InferenceConfig::default(),
            train: TrainConfig::default(),
            synthetic: SyntheticSpec::standard(0),
            corruption: CorruptionSpec::standard(0),
            seed: 0,
            threads: None,
            verbosity: "warn".into(),
        }
    }
}

impl RunConfig {
    /// Checks that every input file exists and the numeric settings are usable.
    pub fn validate(&self) -> Result<(), CliError> {
        if !Path::new(&self.hierarchy).is_file() && fixtures::by_name(&self.hierarchy).is_none() {
            return Err(CliError::new("io", format!("hierarchy '{}' is neither a file nor a bundled name", self.hierarchy)));
        }
        for path in [&self.scores, &self.labels].into_iter().flatten() {
            if !path.is_file() {
                return Err(CliError::new("io", format!("no such file: {}", path.display())));
            }
        }
        if self.threads == Some(0) {
            return Err(CliError::config("--threads must be at least 1"));
        }
        self.loss.validate()?;
        Ok(())
    }

    pub fn load_hierarchy(&self) -> Result<Hierarchy, CliError> {
        let text = if Path::new(&self.hierarchy).is_file() {
            std::fs::read_to_string(&self.hierarchy)?
        } else {
            fixtures::by_name(&self.hierarchy)
                .ok_or_else(|| CliError::new("io", format!("unknown hierarchy '{}'", self.hierarchy)))?
                .to_string()
        };
        Ok(Hierarchy::parse_with_scope(&text, self.peer_scope)?)
    }

    pub fn scores_path(&self) -> Result<&Path, CliError> {
        self.scores.as_deref().ok_or_else(|| CliError::config("--scores is required"))
    }

    pub fn labels_path(&self) -> Result<&Path, CliError> {
        self.labels.as_deref().ok_or_else(|| CliError::config("--labels is required"))
    }
}
