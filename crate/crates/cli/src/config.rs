//! TOML experiment configuration, schema version 1.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use penn::datagen::{ModelKind, SimModel};
use penn::experiment::{Estimator, ExperimentConfig, ImputeScope};
use penn::missing::{ImputerKind, MissingnessMechanism};
use penn::penn::Task;
use penn::train::TrainConfig;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// Note recorded in result metadata whenever the repetition count is below
/// the hundred-repetition protocol.
pub const DESK_SCALE_NOTE: &str = "desk-scale repetition count; the full protocol uses 100 repetitions";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub data: DataConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitConfig>,
    #[serde(default)]
    pub experiment: RunSettings,
    #[serde(default)]
    pub train: TrainConfig,
}

/// Either a simulated model (`model`, `dim`, `rows`) or a CSV `path`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_sd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mechanism: Option<MissingnessMechanism>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl SplitConfig {
    /// 8:1:1 split of `rows`; the test split takes the remainder.
    pub fn from_ratio(rows: usize) -> Self {
        let train = rows * 8 / 10;
        let validation = rows / 10;
        Self {
            train,
            validation,
            test: rows - train - validation,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.validation + self.test
    }

    pub fn scaled(&self, scale: f64) -> Self {
        let s = |n: usize| ((n as f64 * scale).round() as usize).max(1);
        Self {
            train: s(self.train),
            validation: s(self.validation),
            test: s(self.test),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub repetitions: usize,
    pub seed: u64,
    pub estimators: Vec<Estimator>,
    pub imputers: Vec<ImputerKind>,
    pub impute_scope: ImputeScope,
    pub task: Task,
    pub width: usize,
    pub oracle_samples: usize,
}

impl Default for RunSettings {
    fn default() -> Self {
        let base = ExperimentConfig::new(1, 1, 1, ImputerKind::ColumnMean);
        Self {
            repetitions: 10,
            seed: 0,
            estimators: base.estimators,
            imputers: vec![ImputerKind::ColumnMean],
            impute_scope: base.impute_scope,
            task: base.task,
            width: base.width,
            oracle_samples: base.oracle_samples,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let config: Config = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            bail!("schema_version: expected {SCHEMA_VERSION}, found {}", self.schema_version);
        }
        let d = &self.data;
        match (&d.model, &d.path) {
            (Some(_), Some(_)) => bail!("data: give either `model` or `path`, not both"),
            (None, None) => bail!("data: one of `model` or `path` is required"),
            (None, Some(_)) => {
                if d.dim.is_some() || d.noise_sd.is_some() || d.mechanism.is_some() {
                    bail!("data: `dim`, `noise_sd` and `mechanism` apply only to simulated models");
                }
            }
            (Some(_), None) => {
                self.sim_model()?;
            }
        }
        if let Some(split) = &self.split {
            if split.train == 0 || split.validation == 0 || split.test == 0 {
                bail!("split: every split needs at least one row");
            }
        }
        let run = &self.experiment;
        if run.repetitions == 0 {
            bail!("experiment.repetitions: must be at least 1");
        }
        if run.imputers.is_empty() {
            bail!("experiment.imputers: at least one imputer is required");
        }
        if run.estimators.is_empty() {
            bail!("experiment.estimators: at least one estimator is required");
        }
        if run.width == 0 {
            bail!("experiment.width: must be positive");
        }
        self.train.validate().context("train")?;
        Ok(())
    }

    /// The simulated model described by the `data` table.
    pub fn sim_model(&self) -> Result<SimModel> {
        let d = &self.data;
        let kind = d.model.context("data.model is not set")?;
        let dim = d.dim.unwrap_or(kind.min_dim());
        let mut model = SimModel::new(kind, dim).context("data")?;
        if let Some(sd) = d.noise_sd {
            if !(sd >= 0.0 && sd.is_finite()) {
                bail!("data.noise_sd: must be finite and non-negative");
            }
            model.noise_sd = sd;
        }
        if let Some(mech) = &d.mechanism {
            model = model.with_mechanism(mech.clone()).context("data.mechanism")?;
        }
        Ok(model)
    }

    /// Split sizes for a pool of `available` rows.
    pub fn splits(&self, available: usize) -> SplitConfig {
        self.split.unwrap_or_else(|| SplitConfig::from_ratio(available))
    }

    pub fn experiment_config(&self, split: SplitConfig, imputer: ImputerKind) -> ExperimentConfig {
        let run = &self.experiment;
        ExperimentConfig {
            n_train: split.train,
            n_val: split.validation,
            n_test: split.test,
            task: run.task,
            imputer,
            impute_scope: run.impute_scope,
            width: run.width,
            estimators: run.estimators.clone(),
            train: self.train.clone(),
            oracle_samples: run.oracle_samples,
        }
    }
}

/// Overrides accepted by `reproduce --config`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReproduceOverrides {
    pub schema_version: u32,
    #[serde(default)]
    pub experiment: Option<RunSettings>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
}

impl ReproduceOverrides {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let o: Self = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if o.schema_version != SCHEMA_VERSION {
            bail!("schema_version: expected {SCHEMA_VERSION}, found {}", o.schema_version);
        }
        Ok(o)
    }
}
