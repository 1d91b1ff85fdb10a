//! Strict JSON configuration files, one schema per subcommand.

use std::path::{Path, PathBuf};

use lip3d::harness::{SplitKind, TrainConfig};
use lip3d::model::ModelConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Reads `path` into `T`, rejecting unknown keys; `None` yields defaults.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    /// Text file with 200 lip landmark indices; identity when absent.
    pub index_map: Option<PathBuf>,
}

/// `model` defaults to the desk network sized to the dataset.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainRunConfig {
    pub model: Option<ModelConfig>,
    pub train: TrainConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    Train,
    Test,
    All,
}

impl Subset {
    pub fn name(self) -> &'static str {
        match self {
            Subset::Train => "train",
            Subset::Test => "test",
            Subset::All => "all",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub split_kind: SplitKind,
    pub n_train: usize,
    pub seed: u64,
    pub subset: Subset,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            split_kind: t.split_kind,
            n_train: t.n_train,
            seed: t.seed,
            subset: Subset::Test,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateConfig {
    pub model: Option<ModelConfig>,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            model: None,
            train: TrainConfig::default(),
            seeds: (0..5).collect(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StatsConfig {
    pub text_group_size: usize,
    /// Sentences entering the text analysis; the largest multiple of
    /// `text_group_size` that fits when absent.
    pub n_texts_used: Option<usize>,
    pub speaker_group_size: usize,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self {
            text_group_size: 20,
            n_texts_used: None,
            speaker_group_size: 10,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlotPriorConfig {
    pub split_kind: SplitKind,
    pub n_train: usize,
    pub seed: u64,
}

impl Default for PlotPriorConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            split_kind: t.split_kind,
            n_train: t.n_train,
            seed: t.seed,
        }
    }
}
