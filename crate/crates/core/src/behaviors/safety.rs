//! Protective behaviors: obstacle repulsion and the height limit.

use nalgebra::{Vector2, Vector3};

use super::context::{
    ArbitrationClass, BehaviorConfig, BehaviorContext, BehaviorId, BehaviorOutput,
};
use crate::estimation::PlanarScan;

/// Nearest points of distinct obstacles closer than `d_min`. Each pick removes
/// every remaining point lying on or behind the tangent line through it.
pub fn obstacle_points(scan: &PlanarScan, config: &BehaviorConfig) -> Vec<Vector2<f64>> {
    let mut close: Vec<Vector2<f64>> = scan
        .points
        .iter()
        .map(|p| p.point)
        .filter(|p| p.norm() < config.d_min && p.norm() > 1e-9)
        .collect();
    let mut picked = Vec::new();
    while let Some((i, _)) = close
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
    {
        let p = close[i];
        let d = p.norm();
        let u = p / d;
        close.retain(|q| q.dot(&u) < d - config.obstacle_merge);
        picked.push(p);
    }
    picked
}

/// Remove from `v` any positive component along the given unit directions.
/// Returns zero if alternating projections do not settle.
pub fn project_out(v: Vector2<f64>, directions: &[Vector2<f64>]) -> Vector2<f64> {
    let mut v = v;
    for _ in 0..10 {
        let mut changed = false;
        for u in directions {
            let c = v.dot(u);
            if c > 0.0 {
                v -= u * c;
                changed = true;
            }
        }
        if !changed {
            return v;
        }
    }
    if directions.iter().all(|u| v.dot(u) <= 1e-12) {
        v
    } else {
        Vector2::zeros()
    }
}

/// Unit directions to every scan point closer than `d_min`.
fn constraint_directions(scan: &PlanarScan, d_min: f64) -> Vec<Vector2<f64>> {
    scan.points
        .iter()
        .filter(|p| p.range() < d_min && p.range() > 1e-9)
        .map(|p| p.point / p.range())
        .collect()
}

pub fn prevent_collision(ctx: &BehaviorContext) -> BehaviorOutput {
    let cfg = ctx.config;
    let mut out = BehaviorOutput::inactive(
        BehaviorId::PreventCollision,
        ArbitrationClass::CompetitiveOverride,
    );
    let Some(scan) = ctx.scan.filter(|s| !s.is_empty()) else {
        // Blind: freeze.
        out.activation = 1.0;
        return out;
    };
    let obstacles = obstacle_points(scan, cfg);
    if obstacles.is_empty() {
        return out;
    }
    let mut rep = Vector2::zeros();
    for p in &obstacles {
        let d = p.norm();
        rep -= p / d * (cfg.v_rep_max * (1.0 - d / cfg.d_min));
    }
    if rep.norm() > cfg.v_rep_max {
        rep *= cfg.v_rep_max / rep.norm();
    }
    let constraints = constraint_directions(scan, cfg.d_min);
    let rep = project_out(rep, &constraints);
    out.velocity = Vector3::new(rep.x, rep.y, 0.0);
    out.activation = 1.0;
    out.constraints = constraints;
    out
}

pub fn limit_max_height(ctx: &BehaviorContext) -> BehaviorOutput {
    let cfg = ctx.config;
    let z = ctx.state.position.z;
    let mut cap = cfg.vz_max * ((cfg.z_max - z) / cfg.height_ramp).clamp(0.0, 1.0);
    if let Some(c) = ctx.ceiling_distance {
        let ceiling_cap = if c < cfg.d_min {
            -cfg.v_rep_max * (1.0 - c / cfg.d_min)
        } else {
            cfg.vz_max * cfg.attenuation(c)
        };
        cap = cap.min(ceiling_cap);
    }
    let mut out = BehaviorOutput::inactive(
        BehaviorId::LimitMaxHeight,
        ArbitrationClass::CompetitiveLimit,
    );
    out.velocity = Vector3::new(0.0, 0.0, cap);
    if cap < cfg.vz_max {
        out.activation = 1.0;
    }
    out
}
