//! Run configuration: every tunable of a pipeline run in one TOML document.
//!
//! Missing keys fall back to defaults, unknown keys are rejected, and the
//! fully resolved config is what gets written next to a run's outputs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::qnet::NetworkConfig;
use crate::rl::{CemConfig, DatasetConfig, EnvConfig, TrainerConfig, NETWORK_ACTION_DIM};
use crate::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub dataset: Option<String>,
    pub out_dir: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; every subsystem derives its own stream from it.
    pub seed: u64,
    /// Worker threads for episode-parallel work (0 = library default).
    pub threads: usize,
    pub env: EnvConfig,
    pub dataset: DatasetConfig,
    pub network: NetworkConfig,
    pub cem: CemConfig,
    pub trainer: TrainerConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 0,
            env: EnvConfig::default(),
            dataset: DatasetConfig::default(),
            network: NetworkConfig::default(),
            cem: CemConfig::default(),
            trainer: TrainerConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.dataset.validate()?;
        self.network.validate()?;
        self.cem.validate()?;
        self.trainer.validate()?;
        if self.network.image_size != self.env.image_size {
            return Err(Error::Config(format!(
                "network.image_size {} differs from env.image_size {}",
                self.network.image_size, self.env.image_size
            )));
        }
        if self.network.image_channels != 3 {
            return Err(Error::Config("network.image_channels must be 3 for the grasping env".into()));
        }
        if self.network.action_dim != NETWORK_ACTION_DIM {
            return Err(Error::Config(format!(
                "network.action_dim must be {NETWORK_ACTION_DIM} (7 action features + 2 state scalars)"
            )));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }
}
