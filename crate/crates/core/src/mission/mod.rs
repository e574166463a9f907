//! Mission manager: waypoint plans and the position controller.

mod plan;
mod position;
mod script;

pub use plan::{
    fit_front_wall, plan_go_home, plan_keep_position, plan_sweep, plan_vertical, MissionKind,
    MissionSpec, PlanStatus, SweepSpec, VerticalSpec, WallFit, WallFitConfig, Waypoint,
    WaypointPlan, DEFAULT_TOLERANCE,
};
pub use position::{keep_position, position_intention, position_step, MissionConfig};
pub use script::{MissionScript, ScriptAction, ScriptStep};
