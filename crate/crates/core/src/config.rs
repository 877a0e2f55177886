//! Pipeline configuration, read from one JSON file.
//!
//! Every section has defaults; only `dataset.source` must be given.
//!
//! ```json
//! {
//!   "dataset": { "source": { "synthetic": { "n_users": 500, "n_items": 80, "drift": 0.5 } } },
//!   "selection": { "budget": { "count": 64 } }
//! }
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{
    build_sequences, generate_synthetic, ingest_interactions, Dataset, Format, SplitSpec, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::influence::validation::ToyConfig;
use crate::influence::HvpConfig;
use crate::optim::TrainConfig;
use crate::selection::{SelectionConfig, Strategy};
use crate::surrogate::SurrogateConfig;
use crate::target::TargetConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    File {
        path: PathBuf,
        /// Guessed from the extension when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        format: Option<Format>,
    },
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSection {
    pub source: DataSource,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default = "default_min_history")]
    pub min_history: usize,
}

impl DatasetSection {
    /// Reads or generates the interactions and builds the split sequences.
    pub fn build(&self) -> Result<Dataset> {
        let rows = match &self.source {
            DataSource::File { path, format } => {
                let format = match format {
                    Some(f) => *f,
                    None => Format::from_path(path).ok_or_else(|| {
                        Error::InvalidConfig(format!("cannot tell the format of {}", path.display()))
                    })?,
                };
                ingest_interactions(path, format)?.interactions
            }
            DataSource::Synthetic(spec) => generate_synthetic(spec)?,
        };
        build_sequences(&rows, &self.split, self.min_history)
    }
}

fn default_min_history() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateSection {
    pub model: SurrogateConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TargetSection {
    pub model: TargetConfig,
    pub finetune: TrainConfig,
}

impl Default for TargetSection {
    fn default() -> Self {
        TargetSection {
            model: TargetConfig::default(),
            finetune: TrainConfig {
                epochs: 3,
                batch_size: 16,
                learning_rate: 0.05,
                weight_decay: 1e-4,
                seed: 0,
                tolerance: None,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationConfig {
    pub ks: Vec<usize>,
    pub seeds: Vec<u64>,
    pub strategies: Vec<Strategy>,
    /// Also fine-tune on the whole training set.
    pub full_finetune: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            ks: vec![10, 20],
            seeds: vec![0, 1, 2],
            strategies: Strategy::ALL.to_vec(),
            full_finetune: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub dataset: DatasetSection,
    #[serde(default)]
    pub surrogate: SurrogateSection,
    #[serde(default)]
    pub influence: HvpConfig,
    #[serde(default)]
    pub target: TargetSection,
    #[serde(default)]
    pub selection: SelectionConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    /// The convex toy used by the `validate` command.
    #[serde(default)]
    pub validation: ToyConfig,
}

impl PipelineConfig {
    pub fn new(source: DataSource) -> Self {
        PipelineConfig {
            dataset: DatasetSection {
                source,
                split: SplitSpec::default(),
                min_history: default_min_history(),
            },
            surrogate: SurrogateSection::default(),
            influence: HvpConfig::default(),
            target: TargetSection::default(),
            selection: SelectionConfig::default(),
            evaluation: EvaluationConfig::default(),
            validation: ToyConfig::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative data paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        if let DataSource::File { path: data, .. } = &mut cfg.dataset.source {
            if data.is_relative() {
                if let Some(dir) = path.parent() {
                    *data = dir.join(&*data);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data")
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.split.validate()?;
        self.surrogate.model.validate()?;
        self.surrogate.train.validate()?;
        self.influence.validate()?;
        self.target.model.validate()?;
        self.target.finetune.validate()?;
        self.selection.validate()?;
        let ev = &self.evaluation;
        if ev.ks.is_empty() || ev.ks.contains(&0) {
            return Err(Error::InvalidConfig("evaluation.ks must be non-empty and positive".into()));
        }
        if ev.seeds.is_empty() || ev.strategies.is_empty() {
            return Err(Error::InvalidConfig("need at least one seed and one strategy".into()));
        }
        Ok(())
    }
}
