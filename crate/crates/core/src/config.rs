//! Engine configuration file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::actuator::ActuatorConfig;
use crate::perception::PerceptionConfig;
use crate::reasoning::TrackerConfig;

/// Frames per second assumed when converting frame counts to seconds.
pub const DEFAULT_FPS: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub perception: PerceptionConfig,
    pub tracking: TrackerConfig,
    pub actuator: ActuatorConfig,
    pub frames_per_second: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            perception: PerceptionConfig::default(),
            tracking: TrackerConfig::default(),
            actuator: ActuatorConfig::default(),
            frames_per_second: DEFAULT_FPS,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(String),
}

impl EngineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    fn check(&self) -> Result<(), ConfigError> {
        let t = &self.tracking;
        if t.w_sat == 0 || t.w_mem < t.w_sat || t.w_off == 0 {
            return Err(ConfigError::Parse(
                "tracking windows must satisfy 0 < w_sat <= w_mem, w_off > 0".into(),
            ));
        }
        if !(0.0..=1.0).contains(&t.alpha) {
            return Err(ConfigError::Parse(format!("tracking.alpha {} outside [0, 1]", t.alpha)));
        }
        let p = &self.perception;
        if !(0.0..=1.0).contains(&p.min_confidence) || p.grasp_radius <= 0.0 || p.proximity_radius <= 0.0 {
            return Err(ConfigError::Parse("perception thresholds out of range".into()));
        }
        if self.frames_per_second <= 0.0 {
            return Err(ConfigError::Parse("frames_per_second must be positive".into()));
        }
        Ok(())
    }
}
