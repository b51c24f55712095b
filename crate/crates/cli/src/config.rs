//! Experiment configuration, read from JSON for the `tune` subcommand and
//! assembled from flags for `mnist`.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::errors::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Small,
    Full,
}

impl Scale {
    /// (train, validation) sizes of the ladder splits.
    pub fn sizes(self) -> (usize, usize) {
        match self {
            Scale::Small => (3_500, 1_500),
            Scale::Full => (35_000, 15_000),
        }
    }
}

impl std::str::FromStr for Scale {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "small" => Ok(Scale::Small),
            "full" => Ok(Scale::Full),
            other => Err(format!("unknown scale '{other}' (use small|full)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Ls,
    LsReg2,
    LsReg3Feat,
    LsReg3FeatWeight,
}

impl Model {
    pub const LADDER: [Model; 4] =
        [Model::Ls, Model::LsReg2, Model::LsReg3Feat, Model::LsReg3FeatWeight];

    pub fn name(self) -> &'static str {
        match self {
            Model::Ls => "ls",
            Model::LsReg2 => "ls_reg2",
            Model::LsReg3Feat => "ls_reg3_feat",
            Model::LsReg3FeatWeight => "ls_reg3_feat_weight",
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TunerSettings {
    pub t_init: f64,
    pub epsilon: f64,
    pub max_iter: usize,
    pub increase_factor: f64,
    pub decrease_factor: f64,
}

impl Default for TunerSettings {
    fn default() -> Self {
        TunerSettings {
            t_init: 1.0,
            epsilon: 1e-6,
            max_iter: 300,
            increase_factor: 1.2,
            decrease_factor: 0.5,
        }
    }
}

impl TunerSettings {
    pub fn to_config(&self) -> lsqtune::tuner::TunerConfig {
        lsqtune::tuner::TunerConfig {
            t_init: self.t_init,
            epsilon: self.epsilon,
            max_iter: self.max_iter,
            increase_factor: self.increase_factor,
            decrease_factor: self.decrease_factor,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data_path: String,
    pub dataset_scale: Scale,
    pub model: Model,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tuner: TunerSettings,
    #[serde(default)]
    pub early_stopping: bool,
    #[serde(default)]
    pub output_path: Option<String>,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}
