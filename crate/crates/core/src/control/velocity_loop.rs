//! Velocity loop and flight controller producing inner-loop setpoints.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::fsm::{fsm_step, on_ground_guard, FlightPhase, FsmEvent, PhaseState};
use super::fusion::FusedCommand;
use super::pid::{PidController, PidGains};
use crate::estimation::VehicleState;
use crate::events::{Event, EventKind};
use crate::sim::InnerLoopSetpoint;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlConfig {
    pub velocity: PidGains,
    pub altitude: PidGains,
    /// State older than this is not used for control.
    pub stale_after_s: f64,
    pub takeoff_height: f64,
    pub takeoff_speed: f64,
    pub land_speed: f64,
    pub touchdown_height: f64,
    pub touchdown_vz: f64,
    pub altitude_tolerance: f64,
    /// Simulation ticks per control tick.
    pub control_divider: u32,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            velocity: PidGains {
                kp: 0.3,
                ki: 0.05,
                kd: 0.02,
                output_limit: 0.35,
                integral_limit: 2.0,
            },
            altitude: PidGains {
                kp: 0.8,
                ki: 0.1,
                kd: 0.0,
                output_limit: 1.0,
                integral_limit: 1.0,
            },
            stale_after_s: 0.2,
            takeoff_height: 1.0,
            takeoff_speed: 0.5,
            land_speed: 0.3,
            touchdown_height: 0.15,
            touchdown_vz: 0.1,
            altitude_tolerance: 0.05,
            control_divider: 2,
        }
    }
}

/// Horizontal velocity PIDs plus the altitude hold engaged while the
/// commanded vertical speed is zero.
#[derive(Clone, Debug)]
pub struct VelocityController {
    vx: PidController,
    vy: PidController,
    altitude: PidController,
    hold_reference: Option<f64>,
    stale: bool,
    stale_after_s: f64,
}

impl VelocityController {
    pub fn new(config: &ControlConfig) -> Self {
        Self {
            vx: PidController::new(config.velocity),
            vy: PidController::new(config.velocity),
            altitude: PidController::new(config.altitude),
            hold_reference: None,
            stale: false,
            stale_after_s: config.stale_after_s,
        }
    }

    pub fn reset(&mut self) {
        self.vx.reset();
        self.vy.reset();
        self.altitude.reset();
        self.hold_reference = None;
    }

    pub fn hold_reference(&self) -> Option<f64> {
        self.hold_reference
    }

    /// One control tick at time `now`.
    pub fn velocity_loop(
        &mut self,
        cmd: &FusedCommand,
        state: &VehicleState,
        now: f64,
        dt: f64,
    ) -> (InnerLoopSetpoint, Option<Event>) {
        debug_assert!(dt > 0.0);
        if now - state.timestamp > self.stale_after_s {
            let event = (!self.stale).then(|| {
                Event::new(
                    now,
                    EventKind::StaleState,
                    format!("state is {:.3} s old", now - state.timestamp),
                )
            });
            self.stale = true;
            self.reset();
            return (InnerLoopSetpoint::default(), event);
        }
        self.stale = false;

        let v = state.body_velocity();
        let pitch = self.vx.step(cmd.velocity.x - v.x, dt);
        let roll = -self.vy.step(cmd.velocity.y - v.y, dt);

        let z = state.position.z;
        let vz = if cmd.velocity.z == 0.0 {
            let reference = *self.hold_reference.get_or_insert_with(|| {
                self.altitude.reset();
                z
            });
            self.altitude.step(reference - z, dt)
        } else {
            self.hold_reference = None;
            cmd.velocity.z
        };
        (
            InnerLoopSetpoint {
                roll,
                pitch,
                vz,
                yaw_rate: cmd.yaw_rate,
            },
            None,
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlOutput {
    pub setpoint: InnerLoopSetpoint,
    pub motors_on: bool,
    /// The command actually tracked after phase-specific vertical overrides.
    pub tracked: FusedCommand,
}

/// Flight phase machine driving the velocity loop.
#[derive(Clone, Debug)]
pub struct FlightController {
    config: ControlConfig,
    phase: PhaseState,
    velocity: VelocityController,
    home: Option<(Vector3<f64>, f64)>,
    events: Vec<Event>,
}

impl FlightController {
    pub fn new(config: ControlConfig) -> Self {
        Self {
            velocity: VelocityController::new(&config),
            config,
            phase: PhaseState::on_ground(),
            home: None,
            events: Vec::new(),
        }
    }

    pub fn config(&self) -> &ControlConfig {
        &self.config
    }

    pub fn phase(&self) -> FlightPhase {
        self.phase.phase
    }

    pub fn phase_state(&self) -> PhaseState {
        self.phase
    }

    /// Home position and yaw, recorded when take-off completes.
    pub fn home(&self) -> Option<(Vector3<f64>, f64)> {
        self.home
    }

    pub fn set_home(&mut self, position: Vector3<f64>, yaw: f64) {
        self.home = Some((position, yaw));
    }

    pub fn drain_events(&mut self) -> Vec<Event> {
        std::mem::take(&mut self.events)
    }

    /// Feed an event to the phase machine; returns whether the phase changed.
    pub fn handle(&mut self, event: FsmEvent, state: &VehicleState) -> bool {
        let before = self.phase.phase;
        let (next, ev) = fsm_step(self.phase, event, state);
        self.phase = next;
        self.events.push(ev);
        if before == FlightPhase::TakingOff && next.phase == FlightPhase::Flying {
            self.home = Some((state.position, state.yaw));
            self.events.push(
                Event::new(
                    state.timestamp,
                    EventKind::HomeRecorded,
                    "home recorded at take-off".to_string(),
                )
                .at(&state.position),
            );
        }
        if before != next.phase {
            self.velocity.reset();
        }
        before != next.phase
    }

    /// One control tick.
    pub fn step(
        &mut self,
        cmd: &FusedCommand,
        state: &VehicleState,
        now: f64,
        dt: f64,
    ) -> ControlOutput {
        let mut tracked = cmd.clone();
        match self.phase.phase {
            FlightPhase::OnGround => {
                self.velocity.reset();
                return ControlOutput {
                    setpoint: InnerLoopSetpoint::default(),
                    motors_on: false,
                    tracked: FusedCommand::default(),
                };
            }
            FlightPhase::TakingOff => {
                if state.position.z >= self.config.takeoff_height - self.config.altitude_tolerance {
                    self.handle(FsmEvent::AltitudeReached, state);
                    tracked.velocity.z = 0.0;
                } else {
                    tracked.velocity.z = self.config.takeoff_speed;
                }
            }
            FlightPhase::Landing => {
                if state.position.z < self.config.touchdown_height
                    && state.velocity.z.abs() < self.config.touchdown_vz
                {
                    self.handle(FsmEvent::Touchdown, state);
                    return ControlOutput {
                        setpoint: InnerLoopSetpoint::default(),
                        motors_on: false,
                        tracked: FusedCommand::default(),
                    };
                }
                tracked.velocity.z = -self.config.land_speed;
            }
            FlightPhase::Flying => {}
        }
        let (setpoint, event) = self.velocity.velocity_loop(&tracked, state, now, dt);
        self.events.extend(event);
        ControlOutput {
            setpoint,
            motors_on: on_ground_guard(self.phase.phase),
            tracked,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{step_dynamics, DynamicsParams, VehicleTruth};
    use proptest::prelude::*;

    fn hover_state(z: f64) -> VehicleState {
        VehicleState::at(Vector3::new(0.0, 0.0, z), 0.0)
    }

    fn command(vx: f64, vy: f64, vz: f64) -> FusedCommand {
        FusedCommand {
            velocity: Vector3::new(vx, vy, vz),
            ..FusedCommand::default()
        }
    }

    fn from_truth(t: &VehicleTruth, time: f64) -> VehicleState {
        let mut s = VehicleState::at(t.position, t.yaw);
        s.velocity = t.velocity;
        s.roll = t.roll;
        s.pitch = t.pitch;
        s.timestamp = time;
        s
    }

    #[test]
    fn zero_error_gives_level_setpoints() {
        let mut c = VelocityController::new(&ControlConfig::default());
        let (sp, ev) = c.velocity_loop(&command(0.0, 0.0, 0.0), &hover_state(1.0), 0.0, 0.02);
        assert_eq!(sp, InnerLoopSetpoint::default());
        assert!(ev.is_none());
    }

    #[test]
    fn proportional_pitch_on_first_tick() {
        let mut cfg = ControlConfig::default();
        cfg.velocity.ki = 0.0;
        cfg.velocity.kd = 0.0;
        let mut c = VelocityController::new(&cfg);
        let (sp, _) = c.velocity_loop(&command(0.5, 0.0, 0.0), &hover_state(1.0), 0.0, 0.02);
        assert!((sp.pitch - 0.15).abs() < 1e-12);
        assert_eq!(sp.roll, 0.0);
    }

    #[test]
    fn lateral_error_rolls_negative() {
        let mut c = VelocityController::new(&ControlConfig::default());
        let (sp, _) = c.velocity_loop(&command(0.0, 0.5, 0.0), &hover_state(1.0), 0.0, 0.02);
        assert!(sp.roll < 0.0);
    }

    #[test]
    fn altitude_hold_pulls_back_to_reference() {
        let cfg = ControlConfig::default();
        let mut c = VelocityController::new(&cfg);
        c.velocity_loop(&command(0.0, 0.0, 0.0), &hover_state(2.0), 0.0, 0.02);
        assert_eq!(c.hold_reference(), Some(2.0));
        let (sp, _) = c.velocity_loop(&command(0.0, 0.0, 0.0), &hover_state(1.9), 0.0, 0.02);
        // P term plus the integral accumulated on this tick (the first tick had zero error).
        let expected = cfg.altitude.kp * 0.1 + cfg.altitude.ki * 0.1 * 0.02;
        assert!((sp.vz - expected).abs() < 1e-12, "{}", sp.vz);
    }

    #[test]
    fn nonzero_vz_passes_through_and_releases_hold() {
        let mut c = VelocityController::new(&ControlConfig::default());
        c.velocity_loop(&command(0.0, 0.0, 0.0), &hover_state(2.0), 0.0, 0.02);
        let (sp, _) = c.velocity_loop(&command(0.0, 0.0, 0.4), &hover_state(2.0), 0.0, 0.02);
        assert_eq!(sp.vz, 0.4);
        assert_eq!(c.hold_reference(), None);
    }

    #[test]
    fn stale_state_zeroes_setpoints_once() {
        let mut c = VelocityController::new(&ControlConfig::default());
        let (sp, ev) = c.velocity_loop(&command(1.0, 0.0, 0.3), &hover_state(1.0), 0.5, 0.02);
        assert_eq!(sp, InnerLoopSetpoint::default());
        assert_eq!(ev.unwrap().kind, EventKind::StaleState);
        let (_, ev) = c.velocity_loop(&command(1.0, 0.0, 0.3), &hover_state(1.0), 0.52, 0.02);
        assert!(ev.is_none());
    }

    #[test]
    fn closed_loop_step_response() {
        let cfg = ControlConfig::default();
        let params = DynamicsParams::default();
        let mut c = VelocityController::new(&cfg);
        let mut truth = VehicleTruth::hovering(Vector3::new(0.0, 0.0, 2.0), 0.0);
        let cmd = command(0.5, 0.0, 0.0);
        let dt = 0.01;
        let mut sp = InnerLoopSetpoint::default();
        let mut peak: f64 = 0.0;
        let mut settled_at = None;
        for k in 0..1000 {
            let t = k as f64 * dt;
            if k % cfg.control_divider as usize == 0 {
                sp = c
                    .velocity_loop(
                        &cmd,
                        &from_truth(&truth, t),
                        t,
                        dt * cfg.control_divider as f64,
                    )
                    .0;
            }
            truth = step_dynamics(&truth, &sp, [0.0; 3], dt, &params);
            let v = truth.velocity.x;
            peak = peak.max(v);
            let inside = (0.45..=0.55).contains(&v);
            match (inside, settled_at) {
                (true, None) => settled_at = Some(t + dt),
                (false, Some(_)) if t < 2.0 => settled_at = None,
                _ => {}
            }
        }
        let settled = settled_at.expect("never settled");
        assert!(settled <= 2.0, "settled at {settled}");
        assert!(peak <= 0.5 * 1.2, "peak {peak}");
        assert!((truth.velocity.x - 0.5).abs() < 0.05);
    }

    #[test]
    fn takeoff_records_home_then_land_touches_down() {
        let cfg = ControlConfig::default();
        let params = DynamicsParams::default();
        let mut fc = FlightController::new(cfg);
        let mut truth = VehicleTruth::at_rest(1.0, 2.0, 0.3);
        let dt = 0.01;
        let mut t = 0.0;
        fc.handle(FsmEvent::TakeoffCmd, &from_truth(&truth, t));
        let mut out = fc.step(&FusedCommand::default(), &from_truth(&truth, t), t, 0.02);
        for k in 0..3000 {
            if k == 1000 {
                assert_eq!(fc.phase(), FlightPhase::Flying);
                fc.handle(FsmEvent::LandCmd, &from_truth(&truth, t));
            }
            if k % 2 == 0 {
                out = fc.step(&FusedCommand::default(), &from_truth(&truth, t), t, 0.02);
            }
            if out.motors_on {
                truth = step_dynamics(&truth, &out.setpoint, [0.0; 3], dt, &params);
            }
            t += dt;
        }
        assert_eq!(fc.phase(), FlightPhase::OnGround);
        let (home, yaw) = fc.home().unwrap();
        assert!(
            (home.z - 1.0).abs() < 0.1 && (home.x - 1.0).abs() < 1e-6 && (yaw - 0.3).abs() < 1e-6
        );
        assert!(truth.position.z < 0.15);
        let kinds: Vec<EventKind> = fc.drain_events().iter().map(|e| e.kind).collect();
        assert_eq!(
            kinds
                .iter()
                .filter(|k| **k == EventKind::PhaseChange)
                .count(),
            4
        );
        assert!(kinds.contains(&EventKind::HomeRecorded));
    }

    #[test]
    fn on_ground_never_enables_motors() {
        let mut fc = FlightController::new(ControlConfig::default());
        let out = fc.step(&command(1.0, 0.0, 1.0), &hover_state(0.0), 0.0, 0.02);
        assert!(!out.motors_on);
        assert_eq!(out.setpoint, InnerLoopSetpoint::default());
    }

    proptest! {
        #[test]
        fn setpoints_bounded_by_gains(vx in -3.0f64..3.0, vy in -3.0f64..3.0, z in 0.0f64..10.0, n in 1usize..400) {
            let cfg = ControlConfig::default();
            let mut c = VelocityController::new(&cfg);
            for _ in 0..n {
                let (sp, _) = c.velocity_loop(&command(vx, vy, 0.0), &hover_state(z), 0.0, 0.02);
                prop_assert!(sp.pitch.abs() <= cfg.velocity.output_limit);
                prop_assert!(sp.roll.abs() <= cfg.velocity.output_limit);
                prop_assert!(sp.vz.abs() <= cfg.altitude.output_limit);
            }
        }
    }
}
