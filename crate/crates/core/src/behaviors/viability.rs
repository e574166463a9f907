//! Flight viability monitors: battery and base-station link.

use serde::{Deserialize, Serialize};

use super::context::BehaviorContext;

/// Ordered by severity.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum ViabilityVerdict {
    #[default]
    Ok,
    Hold,
    ReturnHome,
    LandNow,
}

pub fn check_flight_viability(ctx: &BehaviorContext) -> ViabilityVerdict {
    let cfg = ctx.config;
    let battery = if ctx.battery_fraction < cfg.battery_land {
        ViabilityVerdict::LandNow
    } else if ctx.battery_fraction < cfg.battery_return {
        ViabilityVerdict::ReturnHome
    } else {
        ViabilityVerdict::Ok
    };
    let link = if ctx.heartbeat_age > cfg.heartbeat_land_s {
        ViabilityVerdict::LandNow
    } else if ctx.heartbeat_age > cfg.heartbeat_hold_s {
        ViabilityVerdict::Hold
    } else {
        ViabilityVerdict::Ok
    };
    battery.max(link)
}
