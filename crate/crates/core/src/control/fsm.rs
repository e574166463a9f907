use serde::{Deserialize, Serialize};

use crate::estimation::VehicleState;
use crate::events::{Event, EventKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlightPhase {
    OnGround,
    TakingOff,
    Flying,
    Landing,
}

impl FlightPhase {
    pub const ALL: [FlightPhase; 4] =
        [Self::OnGround, Self::TakingOff, Self::Flying, Self::Landing];

    pub fn name(self) -> &'static str {
        match self {
            Self::OnGround => "on_ground",
            Self::TakingOff => "taking_off",
            Self::Flying => "flying",
            Self::Landing => "landing",
        }
    }

    pub fn is_airborne(self) -> bool {
        self != Self::OnGround
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FsmEvent {
    TakeoffCmd,
    LandCmd,
    AltitudeReached,
    Touchdown,
    Abort,
}

impl FsmEvent {
    pub const ALL: [FsmEvent; 5] = [
        Self::TakeoffCmd,
        Self::LandCmd,
        Self::AltitudeReached,
        Self::Touchdown,
        Self::Abort,
    ];
}

/// Phase plus the time it was entered.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub phase: FlightPhase,
    pub entered_at: f64,
}

impl PhaseState {
    pub fn on_ground() -> Self {
        Self {
            phase: FlightPhase::OnGround,
            entered_at: 0.0,
        }
    }
}

/// Successor of `phase` under `event`, if the edge exists.
pub fn transition(phase: FlightPhase, event: FsmEvent) -> Option<FlightPhase> {
    use FlightPhase::*;
    use FsmEvent::*;
    match (phase, event) {
        (OnGround, TakeoffCmd) => Some(TakingOff),
        (TakingOff, AltitudeReached) => Some(Flying),
        (TakingOff | Flying, LandCmd | Abort) => Some(Landing),
        (Landing, Touchdown) => Some(OnGround),
        _ => None,
    }
}

/// Apply `event`. Illegal events leave the phase unchanged and produce a warning.
pub fn fsm_step(current: PhaseState, event: FsmEvent, state: &VehicleState) -> (PhaseState, Event) {
    let t = state.timestamp;
    match transition(current.phase, event) {
        Some(next) => (
            PhaseState {
                phase: next,
                entered_at: t,
            },
            Event::new(
                t,
                EventKind::PhaseChange,
                format!("{} -> {}", current.phase.name(), next.name()),
            )
            .at(&state.position),
        ),
        None => (
            current,
            Event::new(
                t,
                EventKind::IllegalTransition,
                format!("{:?} ignored in {}", event, current.phase.name()),
            ),
        ),
    }
}

/// Motors may spin only off the ground.
pub fn on_ground_guard(phase: FlightPhase) -> bool {
    phase != FlightPhase::OnGround
}
