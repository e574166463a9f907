//! Run configuration: every tunable parameter of the stack in one document.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::behaviors::BehaviorConfig;
use crate::control::ControlConfig;
use crate::estimation::EstimationConfig;
use crate::mission::{MissionConfig, WallFitConfig};
use crate::ConfigError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BridgeConfig {
    /// Telemetry frames per second on the wire.
    pub telemetry_hz: f64,
    pub scan_hz: f64,
    /// Synthetic one-way link latency applied to incoming commands.
    pub latency_s: f64,
    /// Telemetry frames buffered before the oldest is dropped.
    pub telemetry_queue: usize,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        Self {
            telemetry_hz: 20.0,
            scan_hz: 10.0,
            latency_s: 0.0,
            telemetry_queue: 64,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub behavior: BehaviorConfig,
    pub control: ControlConfig,
    pub mission: MissionConfig,
    pub wall_fit: WallFitConfig,
    pub estimation: EstimationConfig,
    pub bridge: BridgeConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}
