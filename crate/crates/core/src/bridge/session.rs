//! One simulated vehicle with its onboard stack, advanced tick by tick.

use serde::{Deserialize, Serialize};

use super::autopilot::{Autopilot, Command, Mode, Rejection};
use crate::behaviors::ViabilityVerdict;
use crate::config::RunConfig;
use crate::control::FlightPhase;
use crate::estimation::VehicleState;
use crate::events::Event;
use crate::mission::{MissionKind, PlanStatus};
use crate::sim::{Simulator, VehicleTruth, WorldModel};

/// One row of `log.csv`, written every control tick.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub t: f64,
    pub phase: FlightPhase,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub psi: f64,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub x_true: f64,
    pub y_true: f64,
    pub z_true: f64,
    pub psi_true: f64,
    pub cmd_vx: f64,
    pub cmd_vy: f64,
    pub cmd_vz: f64,
    pub cmd_yawrate: f64,
    pub user_vx: f64,
    pub user_vy: f64,
    pub user_vz: f64,
    /// True horizontal distance to the nearest surface at the vehicle's height.
    pub min_obstacle_d: f64,
    pub battery: f64,
    /// `name:activation` pairs separated by `;`.
    pub active_behaviors: String,
}

pub const LOG_COLUMNS: [&str; 23] = [
    "t",
    "phase",
    "x",
    "y",
    "z",
    "psi",
    "vx",
    "vy",
    "vz",
    "x_true",
    "y_true",
    "z_true",
    "psi_true",
    "cmd_vx",
    "cmd_vy",
    "cmd_vz",
    "cmd_yawrate",
    "user_vx",
    "user_vy",
    "user_vz",
    "min_obstacle_d",
    "battery",
    "active_behaviors",
];

/// One row of the optional per-tick estimation trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub psi: f64,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub x_true: f64,
    pub y_true: f64,
    pub z_true: f64,
    pub psi_true: f64,
    pub vx_true: f64,
    pub vy_true: f64,
    pub vz_true: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BehaviorActivation {
    pub name: String,
    pub activation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthPose {
    pub position: [f64; 3],
    pub yaw: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommandReport {
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub yaw_rate: f64,
    pub clamped: bool,
    pub held: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissionProgress {
    pub kind: MissionKind,
    pub progress: usize,
    pub total: usize,
    pub status: PlanStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TelemetryFrame {
    pub t: f64,
    pub phase: FlightPhase,
    pub mode: String,
    pub state: VehicleState,
    pub truth: Option<TruthPose>,
    pub battery: f64,
    pub behaviors: Vec<BehaviorActivation>,
    pub command: CommandReport,
    pub verdict: ViabilityVerdict,
    pub mission: Option<MissionProgress>,
    pub home: Option<[f64; 3]>,
    pub min_obstacle_d: Option<f64>,
    pub inspection_mode: bool,
    pub heartbeat_age: f64,
    pub events: Vec<Event>,
}

pub struct Session {
    sim: Simulator,
    autopilot: Autopilot,
}

impl Session {
    pub fn new(world: WorldModel, seed: u64, config: RunConfig, link_monitored: bool) -> Self {
        let autopilot = Autopilot::new(&world, config, link_monitored);
        Self {
            sim: Simulator::new(world, seed),
            autopilot,
        }
    }

    pub fn time(&self) -> f64 {
        self.sim.time()
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    pub fn autopilot(&self) -> &Autopilot {
        &self.autopilot
    }

    pub fn truth(&self) -> &VehicleTruth {
        self.sim.truth()
    }

    pub fn apply(&mut self, command: &Command) -> Result<(), Rejection> {
        self.autopilot.apply(command)
    }

    pub fn drain_events(&mut self) -> Vec<Event> {
        self.autopilot.drain_events()
    }

    /// Advance one simulation tick. Returns true when the control loop ran;
    /// `observe` sees the session after the stack ran and before the vehicle moves.
    pub fn step_with(&mut self, mut observe: impl FnMut(&Session, bool)) -> bool {
        let frame = self.sim.sense();
        let battery = self.sim.truth().battery_fraction;
        let (setpoint, motors) = self.autopilot.tick(&frame, battery);
        let control = self.autopilot.is_control_tick();
        observe(self, control);
        self.sim.advance(&setpoint, motors);
        control
    }

    pub fn step(&mut self) -> bool {
        self.step_with(|_, _| {})
    }

    pub fn min_obstacle_distance(&self) -> Option<f64> {
        let p = self.sim.truth().position;
        self.sim
            .world()
            .nearest_obstacle(p.x, p.y, p.z)
            .map(|(d, _)| d)
    }

    fn active_behaviors(&self) -> Vec<BehaviorActivation> {
        self.autopilot
            .outputs()
            .iter()
            .filter(|o| o.is_active())
            .map(|o| BehaviorActivation {
                name: o.behavior.name().to_string(),
                activation: o.activation,
            })
            .collect()
    }

    pub fn log_row(&self) -> LogRow {
        let s = self.autopilot.state();
        let tr = self.sim.truth();
        let cmd = self.autopilot.fused();
        let user = self.autopilot.user_command();
        let user_active = matches!(self.autopilot.mode(), Mode::Manual);
        let behaviors = self
            .active_behaviors()
            .iter()
            .map(|b| format!("{}:{:.3}", b.name, b.activation))
            .collect::<Vec<_>>()
            .join(";");
        LogRow {
            t: s.timestamp,
            phase: self.autopilot.phase(),
            x: s.position.x,
            y: s.position.y,
            z: s.position.z,
            psi: s.yaw,
            vx: s.velocity.x,
            vy: s.velocity.y,
            vz: s.velocity.z,
            x_true: tr.position.x,
            y_true: tr.position.y,
            z_true: tr.position.z,
            psi_true: tr.yaw,
            cmd_vx: cmd.velocity.x,
            cmd_vy: cmd.velocity.y,
            cmd_vz: cmd.velocity.z,
            cmd_yawrate: cmd.yaw_rate,
            user_vx: if user_active { user.vx } else { 0.0 },
            user_vy: if user_active { user.vy } else { 0.0 },
            user_vz: if user_active { user.vz } else { 0.0 },
            min_obstacle_d: self.min_obstacle_distance().unwrap_or(f64::INFINITY),
            battery: tr.battery_fraction,
            active_behaviors: behaviors,
        }
    }

    pub fn trace_row(&self) -> TraceRow {
        let s = self.autopilot.state();
        let tr = self.sim.truth();
        TraceRow {
            t: s.timestamp,
            x: s.position.x,
            y: s.position.y,
            z: s.position.z,
            psi: s.yaw,
            vx: s.velocity.x,
            vy: s.velocity.y,
            vz: s.velocity.z,
            x_true: tr.position.x,
            y_true: tr.position.y,
            z_true: tr.position.z,
            psi_true: tr.yaw,
            vx_true: tr.velocity.x,
            vy_true: tr.velocity.y,
            vz_true: tr.velocity.z,
        }
    }

    /// Telemetry snapshot; `events` are the events drained since the previous frame.
    pub fn telemetry(&self, events: Vec<Event>) -> TelemetryFrame {
        let a = &self.autopilot;
        let tr = self.sim.truth();
        let cmd = a.fused();
        TelemetryFrame {
            t: a.state().timestamp,
            phase: a.phase(),
            mode: a.mode().name().to_string(),
            state: *a.state(),
            truth: Some(TruthPose {
                position: [tr.position.x, tr.position.y, tr.position.z],
                yaw: tr.yaw,
            }),
            battery: tr.battery_fraction,
            behaviors: self.active_behaviors(),
            command: CommandReport {
                vx: cmd.velocity.x,
                vy: cmd.velocity.y,
                vz: cmd.velocity.z,
                yaw_rate: cmd.yaw_rate,
                clamped: cmd.provenance.clamped,
                held: cmd.provenance.held,
            },
            verdict: a.verdict(),
            mission: a.plan().map(|p| MissionProgress {
                kind: p.kind,
                progress: p.progress,
                total: p.len(),
                status: p.status,
            }),
            home: a.home().map(|h| [h.position.x, h.position.y, h.position.z]),
            min_obstacle_d: a.latest_scan().and_then(|s| s.min_range()),
            inspection_mode: a.inspection_mode(),
            heartbeat_age: a.heartbeat_age(),
            events,
        }
    }
}
