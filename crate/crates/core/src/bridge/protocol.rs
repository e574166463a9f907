//! Ground-station wire protocol: one JSON object per line (TCP) or per text
//! message (WebSocket), discriminated by `type`.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::autopilot::Command;
use super::session::{Session, TelemetryFrame};
use crate::events::Event;
use crate::mission::{MissionKind, PlanStatus, WaypointPlan};

/// Downstream message: a command with an optional client-chosen id that the
/// matching `ack` echoes as `ref`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientMessage {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<Value>,
    #[serde(flatten)]
    pub command: Command,
}

impl ClientMessage {
    pub fn new(command: Command) -> Self {
        Self { id: None, command }
    }

    pub fn with_id(id: impl Into<Value>, command: Command) -> Self {
        Self {
            id: Some(id.into()),
            command,
        }
    }
}

/// A line that could not be turned into a command.
#[derive(Clone, Debug, PartialEq)]
pub struct Malformed {
    pub id: Option<Value>,
    pub reason: String,
}

/// Parse one downstream line. The id is recovered from malformed commands
/// whenever the line is at least a JSON object.
pub fn parse_client(line: &str) -> Result<ClientMessage, Malformed> {
    serde_json::from_str::<ClientMessage>(line).map_err(|e| {
        let id = serde_json::from_str::<Value>(line)
            .ok()
            .and_then(|v| v.get("id").cloned());
        Malformed {
            id,
            reason: e.to_string(),
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AckStatus {
    Ok,
    /// Well-formed but refused by the vehicle.
    Rejected,
    /// Not a valid message.
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    #[serde(rename = "ref", default)]
    pub reference: Option<Value>,
    /// Command type being acknowledged, when it could be parsed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    pub status: AckStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// Tilt-compensated laser points in the world frame, placed with the
/// estimated pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanFrame {
    pub t: f64,
    pub pose: [f64; 3],
    pub points: Vec<[f64; 2]>,
}

impl ScanFrame {
    pub fn from_session(session: &Session) -> Option<Self> {
        let a = session.autopilot();
        let scan = a.latest_scan()?;
        let s = a.state();
        let (sn, cs) = s.yaw.sin_cos();
        let points = scan
            .points
            .iter()
            .map(|p| {
                let q = p.point;
                [
                    s.position.x + cs * q.x - sn * q.y,
                    s.position.y + sn * q.x + cs * q.y,
                ]
            })
            .collect();
        Some(Self {
            t: s.timestamp,
            pose: [s.position.x, s.position.y, s.yaw],
            points,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanWaypoint {
    pub position: [f64; 3],
    pub yaw: f64,
    pub tolerance: f64,
}

/// Current waypoint plan; sent whenever it starts, advances or ends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanFrame {
    pub t: f64,
    pub kind: Option<MissionKind>,
    pub waypoints: Vec<PlanWaypoint>,
    pub progress: usize,
    pub status: Option<PlanStatus>,
    pub clipped: bool,
}

impl PlanFrame {
    pub fn new(t: f64, plan: Option<&WaypointPlan>) -> Self {
        match plan {
            Some(p) => Self {
                t,
                kind: Some(p.kind),
                waypoints: p
                    .waypoints
                    .iter()
                    .map(|w| PlanWaypoint {
                        position: [w.position.x, w.position.y, w.position.z],
                        yaw: w.yaw,
                        tolerance: w.tolerance,
                    })
                    .collect(),
                progress: p.progress,
                status: Some(p.status),
                clipped: p.clipped,
            },
            None => Self {
                t,
                kind: None,
                waypoints: Vec::new(),
                progress: 0,
                status: None,
                clipped: false,
            },
        }
    }

    /// Whether `other` shows a different plan or progress.
    pub fn differs(&self, other: &Self) -> bool {
        self.kind != other.kind
            || self.waypoints != other.waypoints
            || self.progress != other.progress
            || self.status != other.status
    }
}

/// Upstream message.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum ServerMessage {
    Telemetry(TelemetryFrame),
    Scan(ScanFrame),
    Plan(PlanFrame),
    Event(Event),
    Ack(Ack),
}

impl ServerMessage {
    /// Telemetry and scans may be dropped under back-pressure; everything
    /// else is delivered.
    pub fn droppable(&self) -> bool {
        matches!(self, Self::Telemetry(_) | Self::Scan(_))
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}
