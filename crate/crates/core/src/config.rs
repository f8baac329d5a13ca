//! Pipeline configuration. Every artifact records the SHA-256 of this
//! configuration's canonical JSON so artifacts from different configurations
//! are never mixed.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::{ModelSource, Preprocessing};
use crate::corpus::GroupParams;
use crate::embeddings::PROJECTION_GENERATOR;
use crate::error::{Error, Result};
use crate::metrics::{MetricConfig, Norm, DEFAULT_ALPHA};
use crate::sift::SiftParams;

/// Output dimension of the style projection, matching the content tap.
pub const DEFAULT_PROJECTION_DIM: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub model: ModelSource,
    pub preprocessing: Preprocessing,
    pub projection_seed: u64,
    pub projection_dim: usize,
    pub projection_generator: String,
    pub metric: MetricConfig,
    pub threshold_max: f64,
    pub threshold_step: f64,
    pub groups: GroupParams,
    pub sift: SiftParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            model: ModelSource::Stub { seed: 0 },
            preprocessing: Preprocessing::default(),
            projection_seed: 0,
            projection_dim: DEFAULT_PROJECTION_DIM,
            projection_generator: PROJECTION_GENERATOR.to_string(),
            metric: MetricConfig {
                kind: crate::metrics::MetricKind::Combined,
                norm: Norm::Cosine,
                alpha: Some(DEFAULT_ALPHA),
            },
            threshold_max: 1.0,
            threshold_step: 0.01,
            groups: GroupParams::default(),
            sift: SiftParams::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: PipelineConfig = serde_json::from_str(&text).map_err(|e| Error::Format {
            what: "pipeline config",
            reason: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.metric.validate()?;
        if self.projection_dim == 0 {
            return Err(Error::InvalidArgument("projection_dim must be positive".into()));
        }
        if self.projection_generator != PROJECTION_GENERATOR {
            return Err(Error::InvalidArgument(format!(
                "unsupported projection generator {:?} (this build provides {PROJECTION_GENERATOR:?})",
                self.projection_generator
            )));
        }
        crate::knee::threshold_grid(self.threshold_max, self.threshold_step)?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn hash_bytes(&self) -> [u8; 32] {
        let digest = Sha256::digest(self.to_json().as_bytes());
        let mut out = [0u8; 32];
        out.copy_from_slice(&digest);
        out
    }

    pub fn hash(&self) -> String {
        hex::encode(self.hash_bytes())
    }
}

/// Rejects an artifact whose recorded hash differs from `expected`.
pub fn ensure_same_config(expected: &str, found: &str) -> Result<()> {
    if expected != found {
        return Err(Error::ConfigMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        });
    }
    Ok(())
}
