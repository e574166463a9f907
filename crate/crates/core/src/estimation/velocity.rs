//! Complementary velocity fusion: scan-match displacement rates corrected by
//! the integrated IMU acceleration between scans.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::height::HeightFilterState;
use super::scan_match::ScanMatchResult;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VelocityFusionConfig {
    /// Weight of the scan-match velocity at each 10 Hz scan update.
    pub scan_weight: f64,
}

impl Default for VelocityFusionConfig {
    fn default() -> Self {
        Self { scan_weight: 0.95 }
    }
}

/// Scan-match input for one fusion step.
#[derive(Clone, Copy, Debug)]
pub struct ScanDisplacement<'a> {
    pub result: &'a ScanMatchResult,
    /// Heading at the previous scan, used to rotate the displacement to world.
    pub yaw_prev: f64,
    /// Time between the two scans.
    pub interval: f64,
}

impl ScanDisplacement<'_> {
    pub fn world_velocity(&self) -> Option<Vector2<f64>> {
        if !self.result.converged || self.interval <= 0.0 {
            return None;
        }
        let (s, c) = self.yaw_prev.sin_cos();
        let (dx, dy) = (self.result.dx, self.result.dy);
        Some(Vector2::new(c * dx - s * dy, s * dx + c * dy) / self.interval)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusedVelocity {
    /// World frame.
    pub velocity: Vector3<f64>,
    /// True while the horizontal estimate is IMU-only.
    pub degraded: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VelocityFusion {
    horizontal: Vector2<f64>,
    degraded: bool,
}

impl VelocityFusion {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&mut self, v: Vector2<f64>) {
        self.horizontal = v;
        self.degraded = false;
    }

    /// Propagate with the world-frame horizontal acceleration and blend in
    /// the scan-match velocity when one is supplied.
    pub fn fuse_velocity(
        &mut self,
        scan: Option<ScanDisplacement<'_>>,
        accel_world: Vector2<f64>,
        height: &HeightFilterState,
        dt: f64,
        config: &VelocityFusionConfig,
    ) -> FusedVelocity {
        debug_assert!(dt > 0.0);
        let propagated = self.horizontal + accel_world * dt;
        self.horizontal = match scan {
            Some(s) => match s.world_velocity() {
                Some(v) => {
                    self.degraded = false;
                    v * config.scan_weight + propagated * (1.0 - config.scan_weight)
                }
                None => {
                    self.degraded = true;
                    propagated
                }
            },
            None => propagated,
        };
        FusedVelocity {
            velocity: Vector3::new(self.horizontal.x, self.horizontal.y, height.vz),
            degraded: self.degraded,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn converged(dx: f64) -> ScanMatchResult {
        ScanMatchResult {
            dx,
            dy: 0.0,
            dpsi: 0.0,
            fitness: 1.0,
            converged: true,
            iterations: 3,
        }
    }

    fn hf() -> HeightFilterState {
        HeightFilterState::new(1.0)
    }

    #[test]
    fn stationary_perfect_sensors_give_zero() {
        let mut f = VelocityFusion::new();
        let cfg = VelocityFusionConfig::default();
        let m = converged(0.0);
        for k in 0..100 {
            let scan = (k % 10 == 0).then_some(ScanDisplacement {
                result: &m,
                yaw_prev: 0.0,
                interval: 0.1,
            });
            let out = f.fuse_velocity(scan, Vector2::zeros(), &hf(), 0.01, &cfg);
            assert_eq!(out.velocity, Vector3::zeros());
        }
    }

    #[test]
    fn constant_velocity_is_tracked_within_two_seconds() {
        let mut f = VelocityFusion::new();
        let cfg = VelocityFusionConfig::default();
        let m = converged(0.05);
        let mut out = None;
        for k in 0..200 {
            let scan = (k % 10 == 0).then_some(ScanDisplacement {
                result: &m,
                yaw_prev: 0.0,
                interval: 0.1,
            });
            out = Some(f.fuse_velocity(scan, Vector2::zeros(), &hf(), 0.01, &cfg));
        }
        let v = out.unwrap().velocity;
        assert!((v.x - 0.5).abs() < 0.05 && v.y.abs() < 0.05, "{v:?}");
    }

    #[test]
    fn yaw_rotates_scan_displacement_into_world() {
        let m = converged(0.1);
        let d = ScanDisplacement {
            result: &m,
            yaw_prev: std::f64::consts::FRAC_PI_2,
            interval: 0.1,
        };
        let v = d.world_velocity().unwrap();
        assert!(v.x.abs() < 1e-12 && (v.y - 1.0).abs() < 1e-12);
    }

    /// Noise-propagation oracle: over a dropout of T seconds with white
    /// accelerometer noise sigma at rate 1/dt, the velocity error is a random
    /// walk with standard deviation sigma * sqrt(T * dt).
    #[test]
    fn dropout_drift_bounded_by_accelerometer_noise() {
        let cfg = VelocityFusionConfig::default();
        let sigma = 0.02;
        let (dt, dropout): (f64, f64) = (0.01, 0.5);
        let bound = 4.0 * sigma * (dropout * dt).sqrt();
        let noise = Normal::new(0.0, sigma).unwrap();
        let failed = ScanMatchResult::default();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut f = VelocityFusion::new();
            f.reset(Vector2::new(0.5, 0.0));
            let mut degraded = false;
            for k in 0..50 {
                let scan = (k % 10 == 0).then_some(ScanDisplacement {
                    result: &failed,
                    yaw_prev: 0.0,
                    interval: 0.1,
                });
                let a = Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng));
                let out = f.fuse_velocity(scan, a, &hf(), dt, &cfg);
                degraded |= out.degraded;
                assert!((out.velocity.xy() - Vector2::new(0.5, 0.0)).norm() < bound * 1.5);
            }
            assert!(degraded);
        }
    }
}
