//! Service configuration file.
//!
//! ```toml
//! [backend]
//! provider = "openai_compatible"
//! endpoint_url = "https://api.example.com/v1/chat/completions"
//! model_name = "gpt-3.5-turbo"
//! api_key_env = "OPENAI_API_KEY"
//!
//! [aging]
//! provider = "stub"
//!
//! [experiment]
//! seed = 7
//! alpha = 0.05
//! weights = { future_you = 1.0, chat = 1.0, questionnaire = 1.0, control = 1.0 }
//!
//! [server]
//! bind = "127.0.0.1:8080"
//! data_dir = "data"
//! ```
//!
//! API keys are read from the environment variable named by
//! `backend.api_key_env`; a literal key in the file is rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aging::{AgingConfig, AgingProviderKind};
use crate::chat::ChatConfig;
use crate::experiment::{equal_weights, Condition};
use crate::llm::BackendConfig;
use crate::memory::MemoryConfig;
use crate::stats::{AnalysisOptions, LeveneCenter, NormalityMode};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub weights: BTreeMap<Condition, f64>,
    pub seed: u64,
    pub alpha: f64,
    pub normality: NormalityMode,
    pub levene_center: LeveneCenter,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            weights: equal_weights(),
            seed: 0,
            alpha: 0.05,
            normality: NormalityMode::default(),
            levene_center: LeveneCenter::Mean,
        }
    }
}

impl ExperimentConfig {
    pub fn analysis_options(&self) -> AnalysisOptions {
        AnalysisOptions {
            alpha: self.alpha,
            normality: self.normality,
            levene_center: self.levene_center,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
    pub data_dir: PathBuf,
    /// Sequential session ids and a stepping clock, for reproducible runs.
    pub deterministic: bool,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("data"),
            deterministic: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub backend: BackendConfig,
    pub aging: AgingConfig,
    pub experiment: ExperimentConfig,
    pub server: ServerConfig,
    pub memory: MemoryConfig,
    pub chat: ChatConfig,
}

impl AppConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let raw: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if let Some(backend) = raw.get("backend").and_then(|b| b.as_table()) {
            if backend.contains_key("api_key") {
                return Err(ConfigError::Invalid(
                    "backend.api_key is not allowed; name an environment variable in backend.api_key_env".into(),
                ));
            }
        }
        let config: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.backend
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.experiment.alpha > 0.0 && self.experiment.alpha < 1.0) {
            return Err(ConfigError::Invalid("experiment.alpha must be in (0, 1)".into()));
        }
        let w = &self.experiment.weights;
        if w.values().any(|v| !v.is_finite() || *v < 0.0) || w.values().sum::<f64>() <= 0.0 {
            return Err(ConfigError::Invalid("experiment.weights must be non-negative with a positive sum".into()));
        }
        if self.aging.provider == AgingProviderKind::External && self.aging.endpoint_url.is_empty() {
            return Err(ConfigError::Invalid("aging.endpoint_url is required for the external provider".into()));
        }
        if self.memory.fanout == 0 {
            return Err(ConfigError::Invalid("memory.fanout must be at least 1".into()));
        }
        Ok(())
    }
}
