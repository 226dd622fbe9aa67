//! JSON run configuration. Unknown keys are rejected; every omitted key takes
//! its default.
//!
//! ```json
//! {
//!   "synth": { "n": 2000, "dim": 2, "ratio": 0.05, "seed": 7 },
//!   "model": { "objective": "oc", "nu": 0.5, "widths": [32, 16, 8] },
//!   "ssl": { "method": "nce", "eta": 1.0 },
//!   "query": { "strategy": "ab", "q1": 0.8 },
//!   "loop": { "budget_fraction": 0.01, "min_n_for_fraction": 500, "small_budget": 6, "stages": 5 },
//!   "train": { "pretrain_epochs": 100, "finetune_epochs": 50, "lr": 0.001, "batch": 128 },
//!   "seeds": [0, 1, 2, 3, 4]
//! }
//! ```
//!
//! Exactly one of `dataset` (`{"path", "label_column", "categorical_columns"}`)
//! and `synth` must be present. `loop.budget` fixes the per-stage budget and
//! `train.stage_epochs` sets retraining epochs per stage (defaults to
//! `finetune_epochs`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::active::{ActiveLoopConfig, BudgetRule};
use crate::data::{generate_synthetic, load_csv, DataError, Dataset};
use crate::nn::AdamConfig;
use crate::query::{Strategy, DEFAULT_Q1, DEFAULT_Q_FLOOR};
use crate::scalar::Scalar;
use crate::ssl::SslMethod;
use crate::svdd::Objective;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSource {
    pub path: PathBuf,
    #[serde(default = "default_label_column")]
    pub label_column: String,
    #[serde(default)]
    pub categorical_columns: Vec<String>,
}

fn default_label_column() -> String {
    "label".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSource {
    pub n: usize,
    pub dim: usize,
    pub ratio: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub objective: Objective,
    pub nu: f64,
    pub widths: Vec<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            objective: Objective::OneClass,
            nu: 0.5,
            widths: vec![32, 16, 8],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SslSection {
    pub method: SslMethod,
    pub eta: f64,
}

impl Default for SslSection {
    fn default() -> Self {
        Self {
            method: SslMethod::Nce,
            eta: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuerySection {
    pub strategy: Strategy,
    pub q1: f64,
}

impl Default for QuerySection {
    fn default() -> Self {
        Self {
            strategy: Strategy::Ab,
            q1: DEFAULT_Q1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoopSection {
    pub budget_fraction: f64,
    pub min_n_for_fraction: usize,
    pub small_budget: usize,
    pub stages: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
}

impl Default for LoopSection {
    fn default() -> Self {
        let rule = BudgetRule::default();
        Self {
            budget_fraction: rule.fraction,
            min_n_for_fraction: rule.min_n_for_fraction,
            small_budget: rule.small_budget,
            stages: 5,
            budget: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage_epochs: Option<usize>,
    pub lr: f64,
    pub batch: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            pretrain_epochs: 100,
            finetune_epochs: 50,
            stage_epochs: None,
            lr: 1e-3,
            batch: 128,
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSource>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub ssl: SslSection,
    #[serde(default)]
    pub query: QuerySection,
    #[serde(default, rename = "loop")]
    pub loop_: LoopSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_json(&text)?;
        // dataset paths are relative to the config file
        if let (Some(ds), Some(dir)) = (config.dataset.as_mut(), path.parent()) {
            if ds.path.is_relative() {
                ds.path = dir.join(&ds.path);
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match (&self.dataset, &self.synth) {
            (Some(_), Some(_)) => return Err(ConfigError::Invalid("give either `dataset` or `synth`, not both".into())),
            (None, None) => return Err(ConfigError::Invalid("one of `dataset` or `synth` is required".into())),
            _ => {}
        }
        if let Some(s) = &self.synth {
            if !(s.ratio > 0.0 && s.ratio < 0.5) || s.n == 0 || s.dim == 0 {
                return Err(ConfigError::Invalid("synth needs n > 0, dim > 0 and 0 < ratio < 0.5".into()));
            }
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("`seeds` must not be empty".into()));
        }
        self.loop_config().validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn loop_config(&self) -> ActiveLoopConfig {
        ActiveLoopConfig {
            objective: self.model.objective,
            nu: self.model.nu,
            widths: self.model.widths.clone(),
            ssl: self.ssl.method,
            eta: self.ssl.eta,
            strategy: self.query.strategy,
            q1: self.query.q1,
            q_floor: DEFAULT_Q_FLOOR,
            budget: BudgetRule {
                fraction: self.loop_.budget_fraction,
                min_n_for_fraction: self.loop_.min_n_for_fraction,
                small_budget: self.loop_.small_budget,
                fixed: self.loop_.budget,
            },
            stages: self.loop_.stages,
            pretrain_epochs: self.train.pretrain_epochs,
            finetune_epochs: self.train.finetune_epochs,
            stage_epochs: self.train.stage_epochs.unwrap_or(self.train.finetune_epochs),
            batch_size: self.train.batch,
            adam: AdamConfig {
                lr: self.train.lr,
                ..AdamConfig::default()
            },
        }
    }

    /// Loads or generates the configured dataset.
    pub fn load_dataset<T: Scalar>(&self) -> Result<Dataset<T>, DataError> {
        match (&self.dataset, &self.synth) {
            (Some(ds), _) => load_csv(&ds.path, &ds.label_column, &ds.categorical_columns),
            (None, Some(s)) => generate_synthetic(s.n, s.dim, s.ratio, s.seed),
            (None, None) => Err(DataError::Empty),
        }
    }
}
