//! Planar laser scanner emulation by ray casting against the 2.5D world.

use nalgebra::{Rotation3, Vector2, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dynamics::VehicleTruth;
use super::world::{Segment, WorldModel};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaserConfig {
    pub fov: f64,
    pub angle_increment: f64,
    pub max_range: f64,
    pub min_range: f64,
}

impl Default for LaserConfig {
    fn default() -> Self {
        Self {
            fov: 270f64.to_radians(),
            angle_increment: 0.25f64.to_radians(),
            max_range: 20.0,
            min_range: 0.05,
        }
    }
}

impl LaserConfig {
    pub fn beam_count(&self) -> usize {
        (self.fov / self.angle_increment).round() as usize + 1
    }
}

/// One sweep of the scanner in the body frame. Missing returns are stored
/// as [`LaserScan::NO_RETURN`].
#[derive(Clone, Debug, PartialEq)]
pub struct LaserScan {
    pub angle_min: f64,
    pub angle_increment: f64,
    pub max_range: f64,
    pub ranges: Vec<f64>,
}

impl LaserScan {
    pub const NO_RETURN: f64 = f64::INFINITY;

    pub fn is_return(range: f64) -> bool {
        range.is_finite()
    }

    pub fn angle(&self, index: usize) -> f64 {
        self.angle_min + index as f64 * self.angle_increment
    }

    pub fn valid_returns(&self) -> usize {
        self.ranges.iter().filter(|r| Self::is_return(**r)).count()
    }

    /// Returns as body-frame points, ignoring tilt.
    pub fn body_points(&self) -> impl Iterator<Item = (usize, Vector2<f64>)> + '_ {
        self.ranges
            .iter()
            .enumerate()
            .filter(|(_, r)| Self::is_return(**r))
            .map(|(i, r)| {
                let a = self.angle(i);
                (i, Vector2::new(r * a.cos(), r * a.sin()))
            })
    }
}

/// Horizontal distance from `origin` along `dir` to the closest segment.
pub(crate) fn cast_ray(
    segments: &[Segment],
    origin: &Vector2<f64>,
    dir: &Vector2<f64>,
) -> Option<f64> {
    segments
        .iter()
        .filter_map(|s| s.ray_intersection(origin, dir))
        .min_by(f64::total_cmp)
}

/// Cast a full scan. Beams leave the tilted body XY plane; each beam is
/// intersected along its horizontal projection and reported as slant range.
/// `sigma` is the standard deviation of the additive range noise.
pub fn cast_laser_scan<R: Rng + ?Sized>(
    truth: &VehicleTruth,
    world: &WorldModel,
    config: &LaserConfig,
    sigma: f64,
    rng: &mut R,
) -> LaserScan {
    let segments = world.segments_at_height(truth.position.z);
    let origin = truth.position.xy();
    let level = Rotation3::from_euler_angles(truth.roll, truth.pitch, 0.0);
    let (sy, cy) = truth.yaw.sin_cos();
    let noise = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
    let n = config.beam_count();
    let angle_min = -0.5 * config.fov;
    let mut ranges = Vec::with_capacity(n);
    for i in 0..n {
        let a = angle_min + i as f64 * config.angle_increment;
        let d = level * Vector3::new(a.cos(), a.sin(), 0.0);
        let horizontal = d.xy().norm();
        let h = d.xy() / horizontal;
        let dir = Vector2::new(cy * h.x - sy * h.y, sy * h.x + cy * h.y);
        let range = cast_ray(&segments, &origin, &dir)
            .map(|s| s / horizontal)
            .map(|r| {
                if sigma > 0.0 {
                    r + noise.sample(rng)
                } else {
                    r
                }
            })
            .filter(|r| *r <= config.max_range && *r >= config.min_range)
            .unwrap_or(LaserScan::NO_RETURN);
        ranges.push(range);
    }
    LaserScan {
        angle_min,
        angle_increment: config.angle_increment,
        max_range: config.max_range,
        ranges,
    }
}
