//! Safety manager: arbitration of behavior outputs into one command.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::behaviors::{
    project_out, ArbitrationClass, BehaviorConfig, BehaviorId, BehaviorOutput, ViabilityVerdict,
};
use crate::FusionError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Active behaviors with their activation levels.
    pub contributions: Vec<(BehaviorId, f64)>,
    pub verdict: ViabilityVerdict,
    /// True when the final limits changed the command.
    pub clamped: bool,
    /// True when this tick replayed the previous command after a rejected fusion.
    pub held: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FusedCommand {
    /// Body frame.
    pub velocity: Vector3<f64>,
    pub yaw_rate: f64,
    pub provenance: Provenance,
}

/// Combine behavior outputs: the intention plus cooperative terms, overrides
/// replacing the approach toward obstacles, limits on vertical speed, and the
/// final magnitude clamps.
pub fn fuse(
    outputs: &[BehaviorOutput],
    verdict: ViabilityVerdict,
    config: &BehaviorConfig,
) -> Result<FusedCommand, FusionError> {
    let active: Vec<&BehaviorOutput> = outputs.iter().filter(|o| o.is_active()).collect();
    let intentions: Vec<&&BehaviorOutput> = active
        .iter()
        .filter(|o| o.behavior.is_intention())
        .collect();
    if intentions.len() > 1 {
        return Err(FusionError::ConflictingIntentions(
            intentions
                .iter()
                .map(|o| o.behavior.name().to_string())
                .collect(),
        ));
    }
    let user_intention = |o: &BehaviorOutput| {
        matches!(
            o.behavior,
            BehaviorId::AttenuatedGo | BehaviorId::AttenuatedInspect
        )
    };

    let mut v = Vector3::zeros();
    let mut yaw_rate = 0.0;
    for o in active
        .iter()
        .filter(|o| o.class == ArbitrationClass::CooperativeAdditive)
    {
        if verdict == ViabilityVerdict::Hold && user_intention(o) {
            continue;
        }
        v += o.velocity * o.activation;
        if o.behavior.is_intention() {
            yaw_rate = o.yaw_rate * o.activation;
        }
    }

    let mut h = v.xy();
    for o in active
        .iter()
        .filter(|o| o.class == ArbitrationClass::CompetitiveOverride)
    {
        let rep = o.velocity.xy() * o.activation;
        if o.constraints.is_empty() {
            // An override without obstacle geometry replaces the horizontal command.
            h = rep;
        } else {
            h = project_out(h, &o.constraints) + rep;
            h = project_out(h, &o.constraints);
        }
    }

    let mut vz = v.z;
    for o in active
        .iter()
        .filter(|o| o.class == ArbitrationClass::CompetitiveLimit)
    {
        vz = vz.min(o.velocity.z);
    }

    let mut clamped = false;
    let n = h.norm();
    if n > config.v_max {
        h *= config.v_max / n;
        clamped = true;
    }
    if vz.abs() > config.vz_max {
        vz = vz.signum() * config.vz_max;
        clamped = true;
    }
    if yaw_rate.abs() > config.yaw_rate_max {
        yaw_rate = yaw_rate.signum() * config.yaw_rate_max;
        clamped = true;
    }
    Ok(FusedCommand {
        velocity: Vector3::new(h.x, h.y, vz),
        yaw_rate,
        provenance: Provenance {
            contributions: active.iter().map(|o| (o.behavior, o.activation)).collect(),
            verdict,
            clamped,
            held: false,
        },
    })
}

/// Stateful wrapper that falls back to the previous command when fusion rejects a tick.
#[derive(Clone, Debug, Default)]
pub struct SafetyManager {
    previous: FusedCommand,
}

impl SafetyManager {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn previous(&self) -> &FusedCommand {
        &self.previous
    }

    pub fn reset(&mut self) {
        self.previous = FusedCommand::default();
    }

    /// Fuse, or on rejection re-fuse the previous command against the current
    /// protective behaviors so the fallback still honours them.
    pub fn arbitrate(
        &mut self,
        outputs: &[BehaviorOutput],
        verdict: ViabilityVerdict,
        config: &BehaviorConfig,
    ) -> (FusedCommand, Option<FusionError>) {
        match fuse(outputs, verdict, config) {
            Ok(cmd) => {
                self.previous = cmd.clone();
                (cmd, None)
            }
            Err(e) => {
                let mut replay: Vec<BehaviorOutput> = outputs
                    .iter()
                    .filter(|o| !o.behavior.is_intention())
                    .cloned()
                    .collect();
                replay.push(BehaviorOutput {
                    behavior: BehaviorId::Mission,
                    velocity: self.previous.velocity,
                    yaw_rate: self.previous.yaw_rate,
                    activation: 1.0,
                    class: ArbitrationClass::CooperativeAdditive,
                    constraints: Vec::new(),
                });
                let mut cmd = fuse(&replay, verdict, config).unwrap_or_default();
                cmd.provenance.held = true;
                (cmd, Some(e))
            }
        }
    }
}

/// Largest velocity component toward any constraint direction (positive means approaching).
pub fn max_approach(velocity: &Vector3<f64>, constraints: &[Vector2<f64>]) -> f64 {
    constraints
        .iter()
        .map(|u| velocity.xy().dot(u))
        .fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn intention(v: Vector3<f64>) -> BehaviorOutput {
        BehaviorOutput {
            behavior: BehaviorId::AttenuatedGo,
            velocity: v,
            yaw_rate: 0.0,
            activation: 1.0,
            class: ArbitrationClass::CooperativeAdditive,
            constraints: Vec::new(),
        }
    }

    fn repulsion(d: f64) -> BehaviorOutput {
        BehaviorOutput {
            behavior: BehaviorId::PreventCollision,
            velocity: Vector3::new(-0.5 * (1.0 - d / 1.3), 0.0, 0.0),
            yaw_rate: 0.0,
            activation: 1.0,
            class: ArbitrationClass::CompetitiveOverride,
            constraints: vec![Vector2::x()],
        }
    }

    #[test]
    fn passthrough_without_safety() {
        let cfg = BehaviorConfig::default();
        let c = fuse(
            &[intention(Vector3::new(1.0, 0.0, 0.0))],
            ViabilityVerdict::Ok,
            &cfg,
        )
        .unwrap();
        assert_eq!(c.velocity, Vector3::new(1.0, 0.0, 0.0));
        assert!(!c.provenance.clamped);
        assert_eq!(
            c.provenance.contributions,
            vec![(BehaviorId::AttenuatedGo, 1.0)]
        );
    }

    #[test]
    fn override_makes_push_toward_wall_negative() {
        let cfg = BehaviorConfig::default();
        let c = fuse(
            &[intention(Vector3::new(1.0, 0.0, 0.0)), repulsion(1.0)],
            ViabilityVerdict::Ok,
            &cfg,
        )
        .unwrap();
        assert!(c.velocity.x < 0.0);
        assert!((c.velocity.x + 0.5 * (1.0 - 1.0 / 1.3)).abs() < 1e-12);
    }

    #[test]
    fn hold_zeroes_user_intention() {
        let cfg = BehaviorConfig::default();
        let c = fuse(
            &[intention(Vector3::new(1.0, 0.0, 0.0))],
            ViabilityVerdict::Hold,
            &cfg,
        )
        .unwrap();
        assert_eq!(c.velocity, Vector3::zeros());
    }

    #[test]
    fn limit_clamps_vertical_only() {
        let cfg = BehaviorConfig::default();
        let mut lim = BehaviorOutput::inactive(
            BehaviorId::LimitMaxHeight,
            ArbitrationClass::CompetitiveLimit,
        );
        lim.activation = 1.0;
        let c = fuse(
            &[intention(Vector3::new(0.3, 0.2, 0.5)), lim],
            ViabilityVerdict::Ok,
            &cfg,
        )
        .unwrap();
        assert_eq!(c.velocity, Vector3::new(0.3, 0.2, 0.0));
    }

    #[test]
    fn over_limit_command_is_clamped_and_flagged() {
        let cfg = BehaviorConfig::default();
        let c = fuse(
            &[intention(Vector3::new(2.0, 0.0, -3.0))],
            ViabilityVerdict::Ok,
            &cfg,
        )
        .unwrap();
        assert_eq!(c.velocity, Vector3::new(1.0, 0.0, -1.0));
        assert!(c.provenance.clamped);
    }

    #[test]
    fn duplicate_intentions_hold_previous() {
        let cfg = BehaviorConfig::default();
        let mut sm = SafetyManager::new();
        sm.arbitrate(
            &[intention(Vector3::new(0.4, 0.0, 0.0))],
            ViabilityVerdict::Ok,
            &cfg,
        );
        let mut other = intention(Vector3::new(-1.0, 0.0, 0.0));
        other.behavior = BehaviorId::Mission;
        let (c, err) = sm.arbitrate(
            &[intention(Vector3::new(1.0, 0.0, 0.0)), other],
            ViabilityVerdict::Ok,
            &cfg,
        );
        assert!(matches!(err, Some(FusionError::ConflictingIntentions(_))));
        assert_eq!(c.velocity, Vector3::new(0.4, 0.0, 0.0));
        assert!(c.provenance.held);
    }

    proptest! {
        #[test]
        fn fused_commands_respect_limits_and_obstacles(
            vx in -5.0f64..5.0, vy in -5.0f64..5.0, vz in -5.0f64..5.0, yaw in -5.0f64..5.0,
            angles in proptest::collection::vec(-3.1f64..3.1, 0..6),
            rx in -0.5f64..0.5, ry in -0.5f64..0.5, cap in -1.0f64..1.0,
        ) {
            let cfg = BehaviorConfig::default();
            let mut i = intention(Vector3::new(vx, vy, vz));
            i.yaw_rate = yaw;
            let constraints: Vec<Vector2<f64>> = angles.iter().map(|a| Vector2::new(a.cos(), a.sin())).collect();
            let mut outs = vec![i];
            if !constraints.is_empty() {
                outs.push(BehaviorOutput {
                    behavior: BehaviorId::PreventCollision,
                    velocity: Vector3::new(rx, ry, 0.0),
                    yaw_rate: 0.0,
                    activation: 1.0,
                    class: ArbitrationClass::CompetitiveOverride,
                    constraints: constraints.clone(),
                });
            }
            let mut lim = BehaviorOutput::inactive(BehaviorId::LimitMaxHeight, ArbitrationClass::CompetitiveLimit);
            lim.activation = 1.0;
            lim.velocity.z = cap;
            outs.push(lim);
            let c = fuse(&outs, ViabilityVerdict::Ok, &cfg).unwrap();
            prop_assert!(c.velocity.xy().norm() <= cfg.v_max + 1e-12);
            prop_assert!(c.velocity.z.abs() <= cfg.vz_max + 1e-12);
            prop_assert!(c.velocity.z <= cap.max(-cfg.vz_max) + 1e-12);
            prop_assert!(c.yaw_rate.abs() <= cfg.yaw_rate_max);
            if !constraints.is_empty() {
                prop_assert!(max_approach(&c.velocity, &constraints) <= 1e-9);
            }
        }
    }
}
