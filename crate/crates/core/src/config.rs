//! Run configuration shared by the command line and the service. Files are
//! TOML or JSON, chosen by extension; a single master seed drives every
//! random stream.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{DesignMode, ModuleCatalog};
use crate::objective::LossWeights;
use crate::search::{GaConfig, DEFAULT_BRUTE_FORCE_CAP};
use crate::solver::SolverConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("unsupported config extension {0:?} (expected .toml or .json)")]
    Format(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigFormat {
    Toml,
    Json,
}

impl ConfigFormat {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("toml") => Ok(ConfigFormat::Toml),
            Some("json") => Ok(ConfigFormat::Json),
            other => Err(ConfigError::Format(other.unwrap_or("").to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: DesignMode,
    pub dof: usize,
    /// Master seed; copied into every component config by [`RunConfig::resolved`].
    pub seed: u64,
    pub solver: SolverConfig,
    pub weights: LossWeights,
    pub ga: GaConfig,
    pub brute_force_cap: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub catalog: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: DesignMode::Modular,
            dof: 6,
            seed: 0,
            solver: SolverConfig::default(),
            weights: LossWeights::default(),
            ga: GaConfig::default(),
            brute_force_cap: DEFAULT_BRUTE_FORCE_CAP,
            catalog: None,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str, format: ConfigFormat) -> Result<Self, ConfigError> {
        match format {
            ConfigFormat::Toml => toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string())),
            ConfigFormat::Json => serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string())),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let format = ConfigFormat::from_path(path)?;
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        Self::parse(&text, format)
    }

    pub fn to_text(&self, format: ConfigFormat) -> String {
        match format {
            ConfigFormat::Toml => toml::to_string_pretty(self).expect("config serializes"),
            ConfigFormat::Json => serde_json::to_string_pretty(self).expect("config serializes"),
        }
    }

    /// Propagates the master seed into the solver and GA configs.
    pub fn resolved(mut self) -> Self {
        self.solver.rng_seed = self.seed;
        self.ga.rng_seed = self.seed;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.dof == 0 {
            return Err(ConfigError::Invalid("dof must be at least 1".into()));
        }
        self.solver.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.weights.validate().map_err(ConfigError::Invalid)?;
        self.ga.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// The configured catalog file, or the bundled one.
    pub fn load_catalog(&self) -> Result<ModuleCatalog, ConfigError> {
        match &self.catalog {
            None => Ok(ModuleCatalog::default_catalog()),
            Some(path) => {
                let bytes = std::fs::read(path).map_err(|source| ConfigError::Io { path: path.clone(), source })?;
                ModuleCatalog::from_json(&bytes).map_err(|e| ConfigError::Invalid(e.to_string()))
            }
        }
    }
}
