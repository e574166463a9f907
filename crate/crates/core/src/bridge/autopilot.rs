//! The onboard stack wired together: estimation, behaviors, safety manager,
//! mission manager and flight controller.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::behaviors::{
    attenuate, attenuated_go, attenuated_inspect, check_flight_viability, limit_max_height,
    prevent_collision, BehaviorConfig, BehaviorContext, BehaviorOutput, VelocityCommand,
    ViabilityVerdict,
};
use crate::config::RunConfig;
use crate::control::{FlightController, FlightPhase, FsmEvent, FusedCommand, SafetyManager};
use crate::estimation::{Estimator, PlanarScan, VehicleState};
use crate::events::{Event, EventKind};
use crate::mission::{
    keep_position, plan_go_home, plan_sweep, plan_vertical, position_step, MissionSpec, PlanStatus,
    SweepSpec, VerticalSpec, Waypoint, WaypointPlan,
};
use crate::sim::{InnerLoopSetpoint, SensorFrame, WorldModel, SIM_DT};

/// Operator or script request. Everything enters the stack through here.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Command {
    Takeoff,
    Land,
    Velocity {
        #[serde(default)]
        vx: f64,
        #[serde(default)]
        vy: f64,
        #[serde(default)]
        vz: f64,
        #[serde(default)]
        yaw_rate: f64,
    },
    InspectionMode {
        on: bool,
    },
    StartSweep(SweepSpec),
    StartVertical(VerticalSpec),
    GoHome,
    SetHome {
        x: f64,
        y: f64,
        z: f64,
        #[serde(default)]
        yaw: Option<f64>,
    },
    /// Engage keep-position at the current pose.
    Keep,
    AbortMission,
    Heartbeat,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Takeoff => "takeoff",
            Self::Land => "land",
            Self::Velocity { .. } => "velocity",
            Self::InspectionMode { .. } => "inspection_mode",
            Self::StartSweep(_) => "start_sweep",
            Self::StartVertical(_) => "start_vertical",
            Self::GoHome => "go_home",
            Self::SetHome { .. } => "set_home",
            Self::Keep => "keep",
            Self::AbortMission => "abort_mission",
            Self::Heartbeat => "heartbeat",
        }
    }
}

/// Why a command was not applied.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rejection {
    pub reason: String,
    /// True for mission planning failures.
    pub planning: bool,
}

impl Rejection {
    fn new(reason: impl Into<String>) -> Self {
        Self {
            reason: reason.into(),
            planning: false,
        }
    }
}

/// What produces the intention this tick.
#[derive(Clone, Debug, PartialEq)]
pub enum Mode {
    /// Operator velocity through attenuated go / inspect.
    Manual,
    Keep(Waypoint),
    Mission(WaypointPlan),
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Manual => "manual",
            Self::Keep(_) => "keep_position",
            Self::Mission(p) => p.kind.name(),
        }
    }
}

pub struct Autopilot {
    config: RunConfig,
    behavior: BehaviorConfig,
    estimator: Estimator,
    flight: FlightController,
    safety: SafetyManager,
    mode: Mode,
    user_command: VelocityCommand,
    inspection_mode: bool,
    verdict: ViabilityVerdict,
    last_heartbeat: f64,
    link_monitored: bool,
    ticks: u64,
    now: f64,
    setpoint: InnerLoopSetpoint,
    motors_on: bool,
    fused: FusedCommand,
    outputs: Vec<BehaviorOutput>,
    clamp_pending: bool,
    events: Vec<Event>,
}

impl Autopilot {
    /// `link_monitored` enables the heartbeat watchdog; headless runs leave it off.
    pub fn new(world: &WorldModel, config: RunConfig, link_monitored: bool) -> Self {
        let mut behavior = config.behavior;
        behavior.z_max = world.z_max();
        behavior.battery_return = world.battery.low_threshold;
        let spawn = world.spawn;
        Self {
            estimator: Estimator::new(
                Vector3::new(spawn.x, spawn.y, 0.0),
                spawn.yaw,
                config.estimation,
            ),
            flight: FlightController::new(config.control),
            safety: SafetyManager::new(),
            behavior,
            config,
            mode: Mode::Manual,
            user_command: VelocityCommand::default(),
            inspection_mode: false,
            verdict: ViabilityVerdict::Ok,
            last_heartbeat: 0.0,
            link_monitored,
            ticks: 0,
            now: 0.0,
            setpoint: InnerLoopSetpoint::default(),
            motors_on: false,
            fused: FusedCommand::default(),
            outputs: Vec::new(),
            clamp_pending: false,
            events: Vec::new(),
        }
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn behavior_config(&self) -> &BehaviorConfig {
        &self.behavior
    }

    pub fn state(&self) -> &VehicleState {
        self.estimator.state()
    }

    pub fn estimator(&self) -> &Estimator {
        &self.estimator
    }

    pub fn phase(&self) -> FlightPhase {
        self.flight.phase()
    }

    pub fn mode(&self) -> &Mode {
        &self.mode
    }

    pub fn plan(&self) -> Option<&WaypointPlan> {
        match &self.mode {
            Mode::Mission(p) => Some(p),
            _ => None,
        }
    }

    pub fn home(&self) -> Option<Waypoint> {
        self.flight.home().map(|(p, yaw)| Waypoint::new(p, yaw))
    }

    pub fn verdict(&self) -> ViabilityVerdict {
        self.verdict
    }

    pub fn user_command(&self) -> VelocityCommand {
        self.user_command
    }

    pub fn inspection_mode(&self) -> bool {
        self.inspection_mode
    }

    pub fn fused(&self) -> &FusedCommand {
        &self.fused
    }

    pub fn outputs(&self) -> &[BehaviorOutput] {
        &self.outputs
    }

    pub fn setpoint(&self) -> InnerLoopSetpoint {
        self.setpoint
    }

    pub fn motors_on(&self) -> bool {
        self.motors_on
    }

    pub fn heartbeat_age(&self) -> f64 {
        if self.link_monitored {
            self.now - self.last_heartbeat
        } else {
            0.0
        }
    }

    pub fn latest_scan(&self) -> Option<&PlanarScan> {
        self.estimator.latest_scan()
    }

    pub fn drain_events(&mut self) -> Vec<Event> {
        let mut out = std::mem::take(&mut self.events);
        out.extend(self.estimator.drain_events());
        out.extend(self.flight.drain_events());
        out.sort_by(|a, b| a.t.total_cmp(&b.t));
        out
    }

    fn event(&mut self, kind: EventKind, detail: impl Into<String>) {
        let e = Event::new(self.now, kind, detail.into()).at(&self.estimator.state().position);
        self.events.push(e);
    }

    fn engage_keep(&mut self, reason: &str) {
        let s = *self.estimator.state();
        self.mode = Mode::Keep(Waypoint::new(s.position, s.yaw));
        self.user_command = VelocityCommand::default();
        self.event(EventKind::KeepPositionEngaged, reason);
    }

    fn cancel_mission(&mut self, reason: &str) {
        if let Mode::Mission(p) = &self.mode {
            if p.status == PlanStatus::Active {
                let detail = format!("{} cancelled: {reason}", p.kind.name());
                self.event(EventKind::MissionCancelled, detail);
            }
        }
    }

    fn start_plan(
        &mut self,
        plan: Result<WaypointPlan, crate::PlanningError>,
    ) -> Result<(), Rejection> {
        match plan {
            Ok(plan) => {
                self.cancel_mission("superseded");
                if plan.clipped {
                    self.event(
                        EventKind::PlanClipped,
                        format!(
                            "{} clipped to z_max {:.2}",
                            plan.kind.name(),
                            self.behavior.z_max
                        ),
                    );
                }
                let detail = serde_json::json!({
                    "kind": plan.kind,
                    "waypoints": plan.waypoints.iter().map(|w| [w.position.x, w.position.y, w.position.z]).collect::<Vec<_>>(),
                    "clipped": plan.clipped,
                });
                self.event(EventKind::MissionStarted, detail.to_string());
                self.user_command = VelocityCommand::default();
                self.mode = Mode::Mission(plan);
                Ok(())
            }
            Err(e) => {
                self.event(EventKind::PlanningError, e.to_string());
                Err(Rejection {
                    reason: e.to_string(),
                    planning: true,
                })
            }
        }
    }

    fn require_flying(&self, what: &str) -> Result<(), Rejection> {
        if self.flight.phase() == FlightPhase::Flying {
            Ok(())
        } else {
            Err(Rejection::new(format!(
                "{what} requires flying, phase is {}",
                self.flight.phase().name()
            )))
        }
    }

    /// Apply an operator command at the current time.
    pub fn apply(&mut self, command: &Command) -> Result<(), Rejection> {
        let state = *self.estimator.state();
        match command {
            Command::Heartbeat => {
                self.last_heartbeat = self.now;
                Ok(())
            }
            Command::Takeoff => {
                if !self.flight.handle(FsmEvent::TakeoffCmd, &state) {
                    return Err(Rejection::new(format!(
                        "takeoff ignored in {}",
                        self.flight.phase().name()
                    )));
                }
                let mut capture = state.position;
                capture.z = self.config.control.takeoff_height;
                self.mode = Mode::Keep(Waypoint::new(capture, state.yaw));
                self.user_command = VelocityCommand::default();
                Ok(())
            }
            Command::Land => {
                if !self.flight.handle(FsmEvent::LandCmd, &state) {
                    return Err(Rejection::new(format!(
                        "land ignored in {}",
                        self.flight.phase().name()
                    )));
                }
                self.cancel_mission("landing");
                self.mode = Mode::Keep(Waypoint::new(state.position, state.yaw));
                self.user_command = VelocityCommand::default();
                Ok(())
            }
            Command::Velocity {
                vx,
                vy,
                vz,
                yaw_rate,
            } => {
                self.require_flying("velocity")?;
                if self.verdict >= ViabilityVerdict::Hold {
                    return Err(Rejection::new(format!(
                        "velocity refused while {:?}",
                        self.verdict
                    )));
                }
                if ![vx, vy, vz, yaw_rate].iter().all(|v| v.is_finite()) {
                    return Err(Rejection::new("non-finite velocity"));
                }
                self.cancel_mission("operator velocity");
                self.mode = Mode::Manual;
                self.user_command = VelocityCommand::new(*vx, *vy, *vz, *yaw_rate);
                let b = &self.behavior;
                let over = Vector3::new(*vx, *vy, 0.0).norm() > b.v_max
                    || vz.abs() > b.vz_max
                    || yaw_rate.abs() > b.yaw_rate_max;
                if over {
                    self.clamp_pending = true;
                    self.event(
                        EventKind::CommandClamped,
                        format!("velocity ({vx}, {vy}, {vz}, {yaw_rate}) clamped to limits"),
                    );
                }
                Ok(())
            }
            Command::InspectionMode { on } => {
                self.inspection_mode = *on;
                Ok(())
            }
            Command::StartSweep(spec) => {
                self.require_flying("start_sweep")?;
                let plan = match self.estimator.latest_scan() {
                    Some(scan) => plan_sweep(
                        spec,
                        &state,
                        scan,
                        self.behavior.z_max,
                        &self.config.wall_fit,
                    ),
                    None => Err(crate::PlanningError::NoInspectableSurface),
                };
                self.start_plan(plan)
            }
            Command::StartVertical(spec) => {
                self.require_flying("start_vertical")?;
                let plan = plan_vertical(spec, &state, self.behavior.z_max);
                self.start_plan(plan)
            }
            Command::GoHome => {
                self.require_flying("go_home")?;
                let home = self.home();
                let plan = plan_go_home(home.as_ref(), &state);
                self.start_plan(plan)
            }
            Command::SetHome { x, y, z, yaw } => {
                let spec = MissionSpec::GoHome { home: [*x, *y, *z] };
                spec.validate(self.behavior.z_max)
                    .map_err(|e| Rejection::new(e.to_string()))?;
                let p = Vector3::new(*x, *y, *z);
                self.flight.set_home(p, yaw.unwrap_or(state.yaw));
                self.events.push(
                    Event::new(self.now, EventKind::HomeRecorded, "home set by operator").at(&p),
                );
                Ok(())
            }
            Command::Keep => {
                self.require_flying("keep")?;
                self.cancel_mission("keep position");
                self.engage_keep("operator request");
                Ok(())
            }
            Command::AbortMission => {
                if !matches!(self.mode, Mode::Mission(_)) {
                    return Err(Rejection::new("no mission running"));
                }
                self.cancel_mission("aborted by operator");
                self.engage_keep("mission aborted");
                Ok(())
            }
        }
    }

    fn react_to_verdict(&mut self, verdict: ViabilityVerdict) {
        if verdict == self.verdict {
            return;
        }
        let previous = self.verdict;
        self.verdict = verdict;
        self.event(
            EventKind::ViabilityChanged,
            format!("{previous:?} -> {verdict:?}"),
        );
        if verdict <= previous || !self.flight.phase().is_airborne() {
            return;
        }
        let state = *self.estimator.state();
        match verdict {
            ViabilityVerdict::Ok => {}
            ViabilityVerdict::Hold => {
                if !matches!(self.mode, Mode::Keep(_)) {
                    self.cancel_mission("link lost");
                    self.engage_keep("base-station heartbeat lost");
                }
            }
            ViabilityVerdict::ReturnHome => {
                let home = self.home();
                if self.flight.phase() == FlightPhase::Flying && home.is_some() {
                    let plan = plan_go_home(home.as_ref(), &state);
                    let _ = self.start_plan(plan);
                } else {
                    self.land_now("return home impossible");
                }
            }
            ViabilityVerdict::LandNow => self.land_now("viability monitor"),
        }
    }

    fn land_now(&mut self, reason: &str) {
        let state = *self.estimator.state();
        self.event(EventKind::LandNowAbort, reason);
        self.cancel_mission(reason);
        if self.flight.phase() != FlightPhase::Landing {
            self.flight.handle(FsmEvent::Abort, &state);
        }
        self.mode = Mode::Keep(Waypoint::new(state.position, state.yaw));
        self.user_command = VelocityCommand::default();
    }

    fn control_tick(&mut self, battery: f64, dt: f64) {
        let state = *self.estimator.state();
        let airborne = self.flight.phase().is_airborne();
        let ctx_user = self.user_command;
        let mut outputs = Vec::with_capacity(4);
        let mut mission_events = Vec::new();
        let mut stalled = false;
        {
            let scan = self.estimator.latest_scan();
            let ctx = BehaviorContext {
                state: &state,
                scan,
                ceiling_distance: self.estimator.ceiling_distance(),
                user_command: ctx_user,
                inspection_mode: self.inspection_mode,
                battery_fraction: battery,
                heartbeat_age: self.heartbeat_age(),
                config: &self.behavior,
            };
            let verdict = check_flight_viability(&ctx);
            if airborne {
                let mut intention = match &mut self.mode {
                    Mode::Manual if self.inspection_mode => attenuated_inspect(&ctx),
                    Mode::Manual => attenuated_go(&ctx),
                    Mode::Keep(capture) => keep_position(capture, &state, &self.config.mission),
                    Mode::Mission(plan) => {
                        let (out, next, events) =
                            position_step(plan, &state, dt, &self.config.mission);
                        stalled =
                            next.status == PlanStatus::Stalled && plan.status == PlanStatus::Active;
                        *plan = next;
                        mission_events = events;
                        out
                    }
                };
                if !matches!(self.mode, Mode::Manual) {
                    if let Some(scan) = scan {
                        intention.velocity = attenuate(intention.velocity, scan, &self.behavior);
                    }
                }
                outputs.push(intention);
                outputs.push(prevent_collision(&ctx));
                outputs.push(limit_max_height(&ctx));
            }
            self.events.extend(mission_events);
            self.react_to_verdict(verdict);
        }
        if stalled {
            self.engage_keep("mission stalled");
        }

        let fused = if airborne {
            let (mut cmd, err) = self
                .safety
                .arbitrate(&outputs, self.verdict, &self.behavior);
            if let Some(e) = err {
                self.event(EventKind::FusionConflict, e.to_string());
            }
            if matches!(self.mode, Mode::Manual) && self.clamp_pending {
                cmd.provenance.clamped = true;
            }
            cmd
        } else {
            self.safety.reset();
            FusedCommand {
                provenance: crate::control::Provenance {
                    verdict: self.verdict,
                    ..Default::default()
                },
                ..FusedCommand::default()
            }
        };
        let out = self.flight.step(&fused, &state, self.now, dt);
        if !matches!(self.mode, Mode::Manual) || ctx_user.is_zero() {
            self.clamp_pending = false;
        }
        self.setpoint = out.setpoint;
        self.motors_on = out.motors_on;
        self.fused = fused;
        self.outputs = outputs;
    }

    /// Consume one sensor frame (one simulation tick) and return the setpoint
    /// to apply until the next tick.
    pub fn tick(&mut self, frame: &SensorFrame, battery: f64) -> (InnerLoopSetpoint, bool) {
        self.now = frame.timestamp;
        self.estimator.step(frame);
        let divider = self.config.control.control_divider.max(1) as u64;
        if self.ticks.is_multiple_of(divider) {
            self.control_tick(battery, SIM_DT * divider as f64);
        }
        self.ticks += 1;
        (self.setpoint, self.motors_on)
    }

    /// True on ticks where the control loop ran.
    pub fn is_control_tick(&self) -> bool {
        let divider = self.config.control.control_divider.max(1) as u64;
        (self.ticks - 1).is_multiple_of(divider)
    }
}
