//! Safety manager and flight controller.

mod fsm;
mod fusion;
mod pid;
mod velocity_loop;

pub use fsm::{fsm_step, on_ground_guard, transition, FlightPhase, FsmEvent, PhaseState};
pub use fusion::{fuse, max_approach, FusedCommand, Provenance, SafetyManager};
pub use pid::{PidController, PidGains};
pub use velocity_loop::{ControlConfig, ControlOutput, FlightController, VelocityController};
