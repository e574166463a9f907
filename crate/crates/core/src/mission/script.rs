//! Mission script files: an ordered list of actions with optional timeouts.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::plan::{SweepSpec, VerticalSpec};
use crate::ScriptError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum ScriptAction {
    Takeoff,
    /// Hold a user velocity command (body frame) for `duration` seconds.
    Velocity {
        #[serde(default)]
        vx: f64,
        #[serde(default)]
        vy: f64,
        #[serde(default)]
        vz: f64,
        #[serde(default)]
        yaw_rate: f64,
        duration: f64,
    },
    Sweep(SweepSpec),
    Vertical(VerticalSpec),
    GoHome,
    SetHome {
        x: f64,
        y: f64,
        z: f64,
        #[serde(default)]
        yaw: Option<f64>,
    },
    Keep {
        duration: f64,
    },
    InspectionMode {
        on: bool,
    },
    Land,
    Wait {
        duration: f64,
    },
}

impl ScriptAction {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Takeoff => "takeoff",
            Self::Velocity { .. } => "velocity",
            Self::Sweep(_) => "sweep",
            Self::Vertical(_) => "vertical",
            Self::GoHome => "go_home",
            Self::SetHome { .. } => "set_home",
            Self::Keep { .. } => "keep",
            Self::InspectionMode { .. } => "inspection_mode",
            Self::Land => "land",
            Self::Wait { .. } => "wait",
        }
    }

    /// Seconds allowed when the step gives no timeout.
    pub fn default_timeout(&self) -> Option<f64> {
        match self {
            Self::Takeoff => Some(30.0),
            Self::Land => Some(60.0),
            Self::Sweep(_) | Self::Vertical(_) | Self::GoHome => Some(900.0),
            _ => None,
        }
    }

    fn validate(&self) -> Result<(), String> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(format!("{name} must be finite"))
            }
        };
        match self {
            Self::Velocity {
                vx,
                vy,
                vz,
                yaw_rate,
                duration,
            } => {
                for (n, v) in [("vx", vx), ("vy", vy), ("vz", vz), ("yaw_rate", yaw_rate)] {
                    finite(n, *v)?;
                }
                if !(*duration >= 0.0) {
                    return Err("duration must be non-negative".into());
                }
            }
            Self::Keep { duration } | Self::Wait { duration } => {
                if !(*duration >= 0.0) {
                    return Err("duration must be non-negative".into());
                }
            }
            Self::Sweep(s) => {
                if !(s.spacing > 0.0)
                    || !(s.height >= 0.0)
                    || !(s.standoff > 0.0)
                    || !(s.width > 0.0 || s.end_to_end)
                {
                    return Err("sweep width, height, spacing and standoff must be positive".into());
                }
            }
            Self::Vertical(v) => {
                if !(v.spacing > 0.0) || !(v.max_height > 0.0) {
                    return Err("vertical max_height and spacing must be positive".into());
                }
            }
            Self::SetHome { x, y, z, .. } => {
                finite("x", *x)?;
                finite("y", *y)?;
                if !(*z > 0.0) {
                    return Err("home z must be positive".into());
                }
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptStep {
    #[serde(flatten)]
    pub action: ScriptAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout: Option<f64>,
}

impl ScriptStep {
    pub fn new(action: ScriptAction) -> Self {
        Self {
            action,
            timeout: None,
        }
    }

    pub fn effective_timeout(&self) -> Option<f64> {
        self.timeout.or_else(|| self.action.default_timeout())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MissionScript {
    #[serde(default)]
    pub name: String,
    pub steps: Vec<ScriptStep>,
}

impl MissionScript {
    pub fn from_json(text: &str) -> Result<Self, ScriptError> {
        let script: Self =
            serde_json::from_str(text).map_err(|e| ScriptError::Parse(e.to_string()))?;
        script.validate()?;
        Ok(script)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScriptError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScriptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ScriptError> {
        for (index, step) in self.steps.iter().enumerate() {
            step.action
                .validate()
                .map_err(|reason| ScriptError::Validation { index, reason })?;
            if let Some(t) = step.timeout {
                if !(t > 0.0) {
                    return Err(ScriptError::Validation {
                        index,
                        reason: "timeout must be positive".into(),
                    });
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_action() {
        let text = r#"{"name":"all","steps":[
            {"action":"takeoff","timeout":20},
            {"action":"velocity","vx":1.0,"duration":5},
            {"action":"sweep","width":6,"height":3},
            {"action":"vertical","max_height":6.5,"offset":1.0,"bearing":3.1},
            {"action":"go_home"},
            {"action":"set_home","x":0,"y":0,"z":1.5},
            {"action":"keep","duration":60},
            {"action":"inspection_mode","on":true},
            {"action":"wait","duration":1},
            {"action":"land"}
        ]}"#;
        let s = MissionScript::from_json(text).unwrap();
        assert_eq!(s.steps.len(), 10);
        assert_eq!(s.steps[0].timeout, Some(20.0));
        let ScriptAction::Sweep(sw) = &s.steps[2].action else {
            panic!()
        };
        assert_eq!(
            (sw.width, sw.height, sw.spacing, sw.standoff, sw.end_to_end),
            (6.0, 3.0, 1.0, 2.0, false)
        );
        let names: Vec<&str> = s.steps.iter().map(|s| s.action.name()).collect();
        assert_eq!(names[4], "go_home");
        let back = MissionScript::from_json(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn unknown_action_is_a_parse_error() {
        let e = MissionScript::from_json(r#"{"steps":[{"action":"teleport"}]}"#).unwrap_err();
        assert!(matches!(e, ScriptError::Parse(_)));
    }

    #[test]
    fn negative_duration_names_the_step() {
        let e = MissionScript::from_json(
            r#"{"steps":[{"action":"takeoff"},{"action":"keep","duration":-1}]}"#,
        )
        .unwrap_err();
        assert!(matches!(e, ScriptError::Validation { index: 1, .. }), "{e}");
    }
}
