//! Waypoint position controller producing mission intentions.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::plan::{PlanStatus, Waypoint, WaypointPlan};
use crate::behaviors::{ArbitrationClass, BehaviorId, BehaviorOutput};
use crate::estimation::VehicleState;
use crate::events::{Event, EventKind};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MissionConfig {
    pub kp: f64,
    pub kp_z: f64,
    /// Horizontal speed cap during autonomous motion.
    pub v_mission: f64,
    pub vz_mission: f64,
    pub yaw_kp: f64,
    pub yaw_rate_max: f64,
    pub tolerance: f64,
    /// Minimum distance decrease expected within `stall_window_s`.
    pub stall_distance: f64,
    pub stall_window_s: f64,
}

impl Default for MissionConfig {
    fn default() -> Self {
        Self {
            kp: 0.6,
            kp_z: 0.6,
            v_mission: 0.5,
            vz_mission: 0.5,
            yaw_kp: 1.0,
            yaw_rate_max: 0.5,
            tolerance: super::plan::DEFAULT_TOLERANCE,
            stall_distance: 0.1,
            stall_window_s: 10.0,
        }
    }
}

fn intention(velocity: Vector3<f64>, yaw_rate: f64) -> BehaviorOutput {
    BehaviorOutput {
        behavior: BehaviorId::Mission,
        velocity,
        yaw_rate,
        activation: 1.0,
        class: ArbitrationClass::CooperativeAdditive,
        constraints: Vec::new(),
    }
}

/// P law toward `target`: world-frame velocity clamped and rotated to the body frame.
pub fn position_intention(
    target: &Waypoint,
    state: &VehicleState,
    config: &MissionConfig,
) -> BehaviorOutput {
    let e = target.position - state.position;
    let mut h = e.xy() * config.kp;
    let n = h.norm();
    if n > config.v_mission {
        h *= config.v_mission / n;
    }
    let vz = (e.z * config.kp_z).clamp(-config.vz_mission, config.vz_mission);
    let body = state.to_body(&Vector3::new(h.x, h.y, vz));
    let yaw_rate = (config.yaw_kp * crate::wrap_angle(target.yaw - state.yaw))
        .clamp(-config.yaw_rate_max, config.yaw_rate_max);
    intention(body, yaw_rate)
}

/// Hold the pose captured at engagement.
pub fn keep_position(
    capture: &Waypoint,
    state: &VehicleState,
    config: &MissionConfig,
) -> BehaviorOutput {
    position_intention(capture, state, config)
}

/// Pursue the current waypoint; advance on arrival, flag stalls.
pub fn position_step(
    plan: &WaypointPlan,
    state: &VehicleState,
    dt: f64,
    config: &MissionConfig,
) -> (BehaviorOutput, WaypointPlan, Vec<Event>) {
    let mut plan = plan.clone();
    let mut events = Vec::new();
    let t = state.timestamp;
    if plan.status != PlanStatus::Active {
        let out = match plan
            .waypoints
            .get(plan.progress.min(plan.len().saturating_sub(1)))
        {
            Some(last) if plan.status == PlanStatus::Complete => {
                position_intention(last, state, config)
            }
            _ => intention(Vector3::zeros(), 0.0),
        };
        return (out, plan, events);
    }
    let Some(target) = plan.current().copied() else {
        plan.status = PlanStatus::Complete;
        return (intention(Vector3::zeros(), 0.0), plan, events);
    };
    let distance = target.distance(&state.position);
    if distance <= target.tolerance {
        plan.dwell_elapsed += dt;
        if plan.dwell_elapsed >= target.dwell {
            events.push(
                Event::new(
                    t,
                    EventKind::WaypointReached,
                    format!("{} {}/{}", plan.kind.name(), plan.progress + 1, plan.len()),
                )
                .at(&state.position),
            );
            plan.progress += 1;
            plan.dwell_elapsed = 0.0;
            plan.stall = Default::default();
            if plan.progress == plan.len() {
                plan.status = PlanStatus::Complete;
                events.push(
                    Event::new(t, EventKind::MissionComplete, plan.kind.name().to_string())
                        .at(&state.position),
                );
                return (position_intention(&target, state, config), plan, events);
            }
        }
    } else {
        plan.dwell_elapsed = 0.0;
    }
    let target = *plan.current().expect("active plan has a waypoint");
    let distance = target.distance(&state.position);
    match plan.stall.best {
        Some(best) if best - distance < config.stall_distance => {
            if t - plan.stall.since > config.stall_window_s {
                plan.status = PlanStatus::Stalled;
                events.push(
                    Event::new(
                        t,
                        EventKind::MissionStalled,
                        format!(
                            "{} waypoint {} unreachable, {:.2} m away",
                            plan.kind.name(),
                            plan.progress + 1,
                            distance
                        ),
                    )
                    .at(&state.position),
                );
                return (intention(Vector3::zeros(), 0.0), plan, events);
            }
        }
        _ => {
            plan.stall.best = Some(distance);
            plan.stall.since = t;
        }
    }
    (position_intention(&target, state, config), plan, events)
}
