//! Behavior layer: pure functions from a context snapshot to arbitrated
//! motion suggestions.

mod context;
mod intention;
mod safety;
mod viability;

pub use context::{
    ArbitrationClass, BehaviorConfig, BehaviorContext, BehaviorId, BehaviorOutput, VelocityCommand,
};
pub use intention::{
    attenuate, attenuated_go, attenuated_inspect, nearest_in_sector, standoff_correction,
};
pub use safety::{limit_max_height, obstacle_points, prevent_collision, project_out};
pub use viability::{check_flight_viability, ViabilityVerdict};
