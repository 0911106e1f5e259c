//! Run configuration: a TOML tree of `backend.*`, `clustering.*`,
//! `matching.*` and `transfer.*` keys over built-in defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backends::{BackendConfig, BackendKind};
use crate::clustering::ClusterOptConfig;
use crate::error::{Error, Result};
use crate::matching::{SimilarityConfig, MIN_SEMANTIC_TOKENS};
use crate::transfer::LossConfig;

pub const ENV_BACKEND: &str = "STYLEGALLERY_BACKEND";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InversionConfig {
    /// DDIM inversion steps used for feature extraction.
    pub steps: usize,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self { steps: 15 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchingConfig {
    #[serde(flatten)]
    pub similarity: SimilarityConfig,
    pub min_tokens: usize,
}

impl Default for MatchingConfig {
    fn default() -> Self {
        Self {
            similarity: SimilarityConfig::default(),
            min_tokens: MIN_SEMANTIC_TOKENS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PipelineConfig {
    pub backend: BackendConfig,
    pub inversion: InversionConfig,
    pub clustering: ClusterOptConfig,
    pub matching: MatchingConfig,
    pub transfer: LossConfig,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Validation(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies `STYLEGALLERY_BACKEND` when set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(kind) = std::env::var(ENV_BACKEND) {
            if !kind.is_empty() {
                self.backend.kind = kind.parse::<BackendKind>()?;
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.inversion.steps == 0 {
            return Err(Error::Validation("inversion.steps must be >= 1".into()));
        }
        self.clustering.validate()?;
        self.matching.similarity.validate()?;
        self.transfer.validate()
    }
}
