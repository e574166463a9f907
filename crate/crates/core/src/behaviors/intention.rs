//! Intention behaviors: the user (or mission) command, attenuated near obstacles.

use nalgebra::{Vector2, Vector3};

use super::context::{
    ArbitrationClass, BehaviorConfig, BehaviorContext, BehaviorId, BehaviorOutput,
};
use crate::estimation::PlanarScan;
use crate::wrap_angle;

/// Nearest scan point within `half_angle` of `bearing`.
pub fn nearest_in_sector(scan: &PlanarScan, bearing: f64, half_angle: f64) -> Option<Vector2<f64>> {
    scan.points
        .iter()
        .filter(|p| wrap_angle(p.bearing() - bearing).abs() <= half_angle)
        .min_by(|a, b| a.range().total_cmp(&b.range()))
        .map(|p| p.point)
}

/// Scale the part of a body-frame command that points at the nearest obstacle
/// inside the cone around its horizontal direction. Other components and the
/// vertical speed pass unchanged.
pub fn attenuate(v: Vector3<f64>, scan: &PlanarScan, config: &BehaviorConfig) -> Vector3<f64> {
    let h = v.xy();
    let speed = h.norm();
    if speed < 1e-12 {
        return v;
    }
    let bearing = h.y.atan2(h.x);
    let Some(p) = nearest_in_sector(scan, bearing, config.cone_half_angle) else {
        return v;
    };
    let d = p.norm();
    let u = p / d;
    let toward = h.dot(&u);
    if toward <= 0.0 {
        return v;
    }
    let a = config.attenuation(d);
    let out = h - u * ((1.0 - a) * toward);
    Vector3::new(out.x, out.y, v.z)
}

fn clamp_norm(v: Vector2<f64>, max: f64) -> Vector2<f64> {
    let n = v.norm();
    if n > max {
        v * (max / n)
    } else {
        v
    }
}

pub fn attenuated_go(ctx: &BehaviorContext) -> BehaviorOutput {
    let cfg = ctx.config;
    let Some(scan) = ctx.scan.filter(|s| !s.is_empty()) else {
        return BehaviorOutput::inactive(
            BehaviorId::AttenuatedGo,
            ArbitrationClass::CooperativeAdditive,
        );
    };
    let cmd = ctx.user_command;
    let h = clamp_norm(Vector2::new(cmd.vx, cmd.vy), cfg.v_max);
    let v = Vector3::new(h.x, h.y, cmd.vz.clamp(-cfg.vz_max, cfg.vz_max));
    BehaviorOutput {
        behavior: BehaviorId::AttenuatedGo,
        velocity: attenuate(v, scan, cfg),
        yaw_rate: cmd.yaw_rate.clamp(-cfg.yaw_rate_max, cfg.yaw_rate_max),
        activation: 1.0,
        class: ArbitrationClass::CooperativeAdditive,
        constraints: Vec::new(),
    }
}

/// Distance-keeping correction toward or away from the front surface.
pub fn standoff_correction(front: f64, config: &BehaviorConfig) -> f64 {
    let (lo, hi) = config.inspect_band;
    let c = if front > hi {
        config.inspect_gain * (front - hi)
    } else if front < lo {
        -config.inspect_gain * (lo - front)
    } else {
        0.0
    };
    c.clamp(-config.v_insp, config.v_insp)
}

pub fn attenuated_inspect(ctx: &BehaviorContext) -> BehaviorOutput {
    let cfg = ctx.config;
    let Some(scan) = ctx.scan.filter(|s| !s.is_empty()) else {
        return BehaviorOutput::inactive(
            BehaviorId::AttenuatedInspect,
            ArbitrationClass::CooperativeAdditive,
        );
    };
    let cmd = ctx.user_command;
    let lim = |x: f64| x.clamp(-cfg.v_insp, cfg.v_insp);
    let mut v = attenuate(
        Vector3::new(lim(cmd.vx), lim(cmd.vy), lim(cmd.vz)),
        scan,
        cfg,
    );
    let front = nearest_in_sector(scan, 0.0, cfg.front_half_angle)
        .map(|p| p.norm())
        .filter(|d| *d <= cfg.inspect_range);
    if let Some(d) = front {
        v.x += standoff_correction(d, cfg);
    }
    BehaviorOutput {
        behavior: BehaviorId::AttenuatedInspect,
        velocity: v.map(lim),
        yaw_rate: cmd.yaw_rate.clamp(-cfg.yaw_rate_max, cfg.yaw_rate_max),
        activation: 1.0,
        class: ArbitrationClass::CooperativeAdditive,
        constraints: Vec::new(),
    }
}
