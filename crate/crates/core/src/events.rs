//! Timestamped event journal shared by every layer of the stack.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    PhaseChange,
    IllegalTransition,
    HomeRecorded,
    DegradedLocalization,
    LocalizationRecovered,
    VelocityDegraded,
    UnusableFrame,
    UwbForced,
    StaleState,
    FusionConflict,
    ViabilityChanged,
    MissionStarted,
    WaypointReached,
    MissionComplete,
    MissionStalled,
    MissionCancelled,
    KeepPositionEngaged,
    PlanningError,
    PlanClipped,
    ScriptAction,
    ScriptTimeout,
    LandNowAbort,
    CommandClamped,
    Warning,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<[f64; 3]>,
}

impl Event {
    pub fn new(t: f64, kind: EventKind, detail: impl Into<String>) -> Self {
        Self {
            t,
            kind,
            detail: detail.into(),
            position: None,
        }
    }

    pub fn at(mut self, p: &Vector3<f64>) -> Self {
        self.position = Some([p.x, p.y, p.z]);
        self
    }
}
