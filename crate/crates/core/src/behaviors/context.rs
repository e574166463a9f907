use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::estimation::{PlanarScan, VehicleState};

/// Every numeric parameter of the behavior layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BehaviorConfig {
    pub v_max: f64,
    pub vz_max: f64,
    pub yaw_rate_max: f64,
    pub v_insp: f64,
    /// Distance below which intentions start being attenuated.
    pub d_att: f64,
    /// Distance below which repulsion overrides intentions.
    pub d_min: f64,
    pub v_rep_max: f64,
    /// Half-angle of the cone around the commanded direction used for attenuation.
    pub cone_half_angle: f64,
    /// Points closer than this to an obstacle's tangent line belong to that obstacle.
    pub obstacle_merge: f64,
    pub z_max: f64,
    /// Vertical ramp below `z_max` over which climb speed is reduced.
    pub height_ramp: f64,
    pub inspect_band: (f64, f64),
    pub inspect_gain: f64,
    pub inspect_range: f64,
    /// Half-angle of the sector that defines the front surface distance.
    pub front_half_angle: f64,
    pub battery_return: f64,
    pub battery_land: f64,
    pub heartbeat_hold_s: f64,
    pub heartbeat_land_s: f64,
}

impl Default for BehaviorConfig {
    fn default() -> Self {
        Self {
            v_max: 1.0,
            vz_max: 1.0,
            yaw_rate_max: 1.0,
            v_insp: 0.3,
            d_att: 2.5,
            d_min: 1.3,
            v_rep_max: 0.5,
            cone_half_angle: std::f64::consts::FRAC_PI_4,
            obstacle_merge: 0.05,
            z_max: 3.0,
            height_ramp: 0.5,
            inspect_band: (1.5, 2.0),
            inspect_gain: 0.5,
            inspect_range: 4.0,
            front_half_angle: 10f64.to_radians(),
            battery_return: 0.25,
            battery_land: 0.10,
            heartbeat_hold_s: 2.0,
            heartbeat_land_s: 10.0,
        }
    }
}

impl BehaviorConfig {
    /// Linear attenuation ramp between `d_min` and `d_att`.
    pub fn attenuation(&self, d: f64) -> f64 {
        ((d - self.d_min) / (self.d_att - self.d_min)).clamp(0.0, 1.0)
    }
}

/// Body-frame velocity command with yaw rate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VelocityCommand {
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub yaw_rate: f64,
}

impl VelocityCommand {
    pub fn new(vx: f64, vy: f64, vz: f64, yaw_rate: f64) -> Self {
        Self {
            vx,
            vy,
            vz,
            yaw_rate,
        }
    }

    pub fn from_vector(v: Vector3<f64>, yaw_rate: f64) -> Self {
        Self::new(v.x, v.y, v.z, yaw_rate)
    }

    pub fn velocity(&self) -> Vector3<f64> {
        Vector3::new(self.vx, self.vy, self.vz)
    }

    pub fn is_zero(&self) -> bool {
        self.vx == 0.0 && self.vy == 0.0 && self.vz == 0.0 && self.yaw_rate == 0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorId {
    AttenuatedGo,
    AttenuatedInspect,
    Mission,
    PreventCollision,
    LimitMaxHeight,
}

impl BehaviorId {
    pub fn name(self) -> &'static str {
        match self {
            Self::AttenuatedGo => "attenuated_go",
            Self::AttenuatedInspect => "attenuated_inspect",
            Self::Mission => "mission",
            Self::PreventCollision => "prevent_collision",
            Self::LimitMaxHeight => "limit_max_height",
        }
    }

    /// Intention behaviors carry what the vehicle is asked to do; at most one
    /// may be active per tick.
    pub fn is_intention(self) -> bool {
        matches!(
            self,
            Self::AttenuatedGo | Self::AttenuatedInspect | Self::Mission
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArbitrationClass {
    CooperativeAdditive,
    CompetitiveOverride,
    CompetitiveLimit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BehaviorOutput {
    pub behavior: BehaviorId,
    /// Body frame. For competitive-limit outputs `velocity.z` is the vertical cap.
    pub velocity: Vector3<f64>,
    pub yaw_rate: f64,
    pub activation: f64,
    pub class: ArbitrationClass,
    /// Unit body-frame directions toward obstacles the command must not approach.
    #[serde(skip)]
    pub constraints: Vec<Vector2<f64>>,
}

impl BehaviorOutput {
    pub fn inactive(behavior: BehaviorId, class: ArbitrationClass) -> Self {
        Self {
            behavior,
            velocity: Vector3::zeros(),
            yaw_rate: 0.0,
            activation: 0.0,
            class,
            constraints: Vec::new(),
        }
    }

    pub fn is_active(&self) -> bool {
        self.activation > 0.0
    }
}

/// One snapshot of everything the behaviors look at during a control tick.
#[derive(Clone, Copy, Debug)]
pub struct BehaviorContext<'a> {
    pub state: &'a VehicleState,
    pub scan: Option<&'a PlanarScan>,
    pub ceiling_distance: Option<f64>,
    pub user_command: VelocityCommand,
    pub inspection_mode: bool,
    pub battery_fraction: f64,
    pub heartbeat_age: f64,
    pub config: &'a BehaviorConfig,
}
