//! TOML pipeline configuration mirroring every config type. Missing keys
//! take their defaults; unknown keys are rejected.
//!
//! ```toml
//! [model]
//! state_dim = 16
//! [train]
//! epochs = 20
//! [gen]
//! n_train = 2000
//! amp_range = [0.5, 2.0]
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::GenConfig;
use crate::error::{Error, Result};
use crate::kalman::KfModel;
use crate::model::ModelConfig;
use crate::stream::StreamConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KfConfig {
    pub process_var: f64,
    /// Defaults to the generator's `noise_std²`.
    pub obs_var: Option<f64>,
}

impl Default for KfConfig {
    fn default() -> Self {
        KfConfig {
            process_var: 1e-3,
            obs_var: None,
        }
    }
}

impl KfConfig {
    pub fn build(&self, channels: usize, noise_std: f64) -> Result<KfModel> {
        let obs_var = self.obs_var.unwrap_or(noise_std * noise_std);
        KfModel::constant_velocity(channels, self.process_var, obs_var)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub horizon: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { horizon: 25 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub gen: GenConfig,
    pub stream: StreamConfig,
    pub kf: KfConfig,
    pub eval: EvalConfig,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(path, &text)
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |s| {
                text[..s.start.min(text.len())].matches('\n').count() as u64 + 1
            });
            Error::format(path, line, e.message().to_string())
        })
    }

    /// Checks every table, including ones the current command ignores.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.gen.validate()?;
        self.stream.validate()?;
        if !(self.kf.process_var >= 0.0 && self.kf.process_var.is_finite()) {
            return Err(Error::InvalidConfig(
                "kf.process_var must be finite and >= 0".into(),
            ));
        }
        if self.kf.obs_var.is_some_and(|r| !(r > 0.0 && r.is_finite())) {
            return Err(Error::InvalidConfig(
                "kf.obs_var must be finite and > 0".into(),
            ));
        }
        Ok(())
    }

    /// Points every component at one user seed. Components draw from
    /// distinct labeled sub-streams of it.
    pub fn set_seed(&mut self, seed: u64) {
        self.model.seed = seed;
        self.train.seed = seed;
        self.gen.seed = seed;
    }
}
