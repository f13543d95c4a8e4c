//! One bundled run configuration covering the body decoder, sensing fan,
//! environment, policy network, and optimization schedule, with a stable
//! content hash used to bind checkpoints and trajectories to the exact
//! settings that produced them.

use crate::body::DecoderConfig;
use crate::env::EnvConfig;
use crate::policy::PolicyConfig;
use crate::rng::fnv1a64;
use crate::sensing::SensingConfig;
use crate::trainer::{PPOConfig, TrainRunConfig};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub decoder: DecoderConfig,
    #[serde(default)]
    pub sensing: SensingConfig,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub ppo: PPOConfig,
    #[serde(default)]
    pub run: TrainRunConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            decoder: DecoderConfig::default(),
            sensing: SensingConfig::default(),
            env: EnvConfig::default(),
            policy: PolicyConfig::default(),
            ppo: PPOConfig::default(),
            run: TrainRunConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.decoder.validate()?;
        self.sensing.validate()?;
        self.env.validate()?;
        self.policy.validate()?;
        self.ppo.validate()?;
        if self.policy.latent_dim != self.decoder.latent_dim {
            return Err(Error::Validation(format!(
                "policy latent dim {} must match decoder latent dim {}",
                self.policy.latent_dim, self.decoder.latent_dim
            )));
        }
        if self.policy.n_rays != self.sensing.n_rays {
            return Err(Error::Validation(format!(
                "policy ray count {} must match sensing ray count {}",
                self.policy.n_rays, self.sensing.n_rays
            )));
        }
        if self.policy.max_steps != self.env.max_steps {
            return Err(Error::Validation(format!(
                "policy max_steps {} must match env max_steps {}",
                self.policy.max_steps, self.env.max_steps
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: String::new(),
            detail: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Parse { detail, .. } => Error::Parse {
                path: path.display().to_string(),
                detail,
            },
            other => other,
        })
    }

    /// Canonical serialized form: field order is fixed by the struct
    /// definitions, floats print in shortest-roundtrip form, so equal
    /// configurations always serialize identically.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Stable 64-bit content hash of the canonical serialization.
    pub fn hash(&self) -> String {
        format!("{:016x}", fnv1a64(self.to_json().as_bytes()))
    }
}
