//! Pipeline configuration file: a JSON document with sections `run`,
//! `sandbox`, `llm`, `filters` and `loss`. Every key is optional.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::filters::FilterLimits;
use crate::llm::LlmConfig;
use crate::loss::LossConfig;
use crate::model::DEFAULT_MAX_ITERATIONS;
use crate::sandbox::{RuntimeSpec, SandboxLimits};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSection {
    pub max_iterations: usize,
    pub rng_seed: u64,
    pub worker_count: usize,
    pub tokenizer: String,
    pub generate_template: String,
    /// Also write filtered-out pairs, with their verdicts, to this file.
    pub rejected_out: Option<String>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            rng_seed: 0,
            worker_count: 4,
            tokenizer: "code-lex-v1".into(),
            generate_template: "default".into(),
            rejected_out: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct SandboxSection {
    #[serde(flatten)]
    pub limits: SandboxLimits,
    pub runtime: RuntimeSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PipelineConfig {
    pub run: RunSection,
    pub sandbox: SandboxSection,
    pub llm: LlmConfig,
    pub filters: FilterLimits,
    pub loss: LossConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg: Self = serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.display().to_string(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.run.max_iterations == 0 {
            return Err(ConfigError::Invalid(
                "run.max_iterations must be >= 1".into(),
            ));
        }
        if self.run.worker_count == 0 {
            return Err(ConfigError::Invalid("run.worker_count must be >= 1".into()));
        }
        if self.sandbox.limits.wall_timeout_ms == 0 {
            return Err(ConfigError::Invalid(
                "sandbox.wall_timeout_ms must be > 0".into(),
            ));
        }
        self.loss
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// Stable hash of the effective configuration.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}
