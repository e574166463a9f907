//! Static environment description and world-file loading.
//!
//! Geometry is 2.5D: walls are polylines in the XY plane extruded from the
//! floor to a given height, boxes are axis-aligned cuboids, and a flat
//! ceiling closes the volume.

use std::path::Path;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::WorldError;

/// Wall polyline extruded from the floor to `height`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wall {
    pub points: Vec<[f64; 2]>,
    pub height: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxObstacle {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl BoxObstacle {
    /// The four vertical faces as 2D segments, counter-clockwise.
    pub fn footprint(&self) -> [Segment; 4] {
        let (x0, y0, x1, y1) = (self.min[0], self.min[1], self.max[0], self.max[1]);
        [
            Segment::new([x0, y0], [x1, y0]),
            Segment::new([x1, y0], [x1, y1]),
            Segment::new([x1, y1], [x0, y1]),
            Segment::new([x0, y1], [x0, y0]),
        ]
    }

    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        x >= self.min[0] && x <= self.max[0] && y >= self.min[1] && y <= self.max[1]
    }
}

/// Constant wind plus a sinusoidal gust along the constant direction.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WindSpec {
    #[serde(default)]
    pub constant: [f64; 3],
    #[serde(default)]
    pub gust_amplitude: f64,
    #[serde(default = "default_gust_period")]
    pub gust_period_s: f64,
}

fn default_gust_period() -> f64 {
    8.0
}

impl WindSpec {
    pub fn calm() -> Self {
        Self {
            constant: [0.0; 3],
            gust_amplitude: 0.0,
            gust_period_s: default_gust_period(),
        }
    }

    /// Wind velocity (m/s, world frame) at sim time `t`.
    pub fn velocity_at(&self, t: f64) -> [f64; 3] {
        let c = self.constant;
        if self.gust_amplitude == 0.0 {
            return c;
        }
        let norm = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
        let dir = if norm > 1e-12 {
            [c[0] / norm, c[1] / norm, c[2] / norm]
        } else {
            [1.0, 0.0, 0.0]
        };
        let g = self.gust_amplitude * (std::f64::consts::TAU * t / self.gust_period_s).sin();
        [c[0] + g * dir[0], c[1] + g * dir[1], c[2] + g * dir[2]]
    }
}

/// Gaussian noise with an optional random-walk bias.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(default)]
    pub sigma: f64,
    /// Random-walk intensity in units per sqrt(second).
    #[serde(default)]
    pub bias_walk_sigma: f64,
    /// Initial bias.
    #[serde(default)]
    pub bias: f64,
}

impl NoiseSpec {
    pub const fn white(sigma: f64) -> Self {
        Self {
            sigma,
            bias_walk_sigma: 0.0,
            bias: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorNoise {
    pub laser: NoiseSpec,
    pub range_down: NoiseSpec,
    pub range_up: NoiseSpec,
    pub baro: NoiseSpec,
    pub accel: NoiseSpec,
    pub gyro: NoiseSpec,
    pub attitude: NoiseSpec,
    pub uwb: NoiseSpec,
}

impl Default for SensorNoise {
    fn default() -> Self {
        Self {
            laser: NoiseSpec::white(0.01),
            range_down: NoiseSpec::white(0.01),
            range_up: NoiseSpec::white(0.02),
            baro: NoiseSpec {
                sigma: 0.05,
                bias_walk_sigma: 0.005,
                bias: 0.3,
            },
            accel: NoiseSpec::white(0.02),
            gyro: NoiseSpec::white(0.002),
            attitude: NoiseSpec::white(0.002),
            uwb: NoiseSpec::white(0.15),
        }
    }
}

impl SensorNoise {
    /// Every sigma and bias set to zero.
    pub fn noiseless() -> Self {
        let z = NoiseSpec::white(0.0);
        Self {
            laser: z,
            range_down: z,
            range_up: z,
            baro: z,
            accel: z,
            gyro: z,
            attitude: z,
            uwb: z,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatterySpec {
    pub hover_endurance_s: f64,
    pub low_threshold: f64,
}

impl Default for BatterySpec {
    fn default() -> Self {
        Self {
            hover_endurance_s: 1200.0,
            low_threshold: 0.25,
        }
    }
}

/// Where the vehicle rests before takeoff.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Spawn {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub yaw: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldModel {
    #[serde(default)]
    pub walls: Vec<Wall>,
    #[serde(default)]
    pub boxes: Vec<BoxObstacle>,
    pub ceiling_height: f64,
    /// Maximum allowed flight height; defaults to one metre below the ceiling.
    #[serde(default)]
    pub z_max: Option<f64>,
    #[serde(default = "WindSpec::calm")]
    pub wind: WindSpec,
    #[serde(default)]
    pub sensor_noise: SensorNoise,
    #[serde(default)]
    pub battery: BatterySpec,
    #[serde(default)]
    pub spawn: Spawn,
}

/// Line segment in the horizontal plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub a: Vector2<f64>,
    pub b: Vector2<f64>,
}

impl Segment {
    pub fn new(a: [f64; 2], b: [f64; 2]) -> Self {
        Self {
            a: Vector2::new(a[0], a[1]),
            b: Vector2::new(b[0], b[1]),
        }
    }

    pub fn length(&self) -> f64 {
        (self.b - self.a).norm()
    }

    pub fn closest_point(&self, p: &Vector2<f64>) -> Vector2<f64> {
        let ab = self.b - self.a;
        let len2 = ab.norm_squared();
        if len2 < 1e-18 {
            return self.a;
        }
        let t = ((p - self.a).dot(&ab) / len2).clamp(0.0, 1.0);
        self.a + ab * t
    }

    /// Distance along the ray `origin + s * dir` to this segment, if hit.
    pub fn ray_intersection(&self, origin: &Vector2<f64>, dir: &Vector2<f64>) -> Option<f64> {
        let e = self.b - self.a;
        let denom = cross(dir, &e);
        if denom.abs() < 1e-15 {
            return None;
        }
        let w = self.a - origin;
        let s = cross(&w, &e) / denom;
        let u = cross(&w, dir) / denom;
        if s > 0.0 && (-1e-12..=1.0 + 1e-12).contains(&u) {
            Some(s)
        } else {
            None
        }
    }
}

pub(crate) fn cross(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

impl WorldModel {
    pub fn from_json(text: &str) -> Result<Self, WorldError> {
        let world: WorldModel =
            serde_json::from_str(text).map_err(|e| WorldError::Parse(e.to_string()))?;
        world.validate()?;
        Ok(world)
    }

    pub fn z_max(&self) -> f64 {
        self.z_max.unwrap_or(self.ceiling_height - 1.0)
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        let invalid = |path: String, reason: &str| WorldError::Validation {
            path,
            reason: reason.to_string(),
        };
        if !(self.ceiling_height > 0.0) {
            return Err(invalid("ceiling_height".into(), "must be > 0"));
        }
        for (i, wall) in self.walls.iter().enumerate() {
            if !(wall.height > 0.0) {
                return Err(invalid(format!("walls[{i}].height"), "must be > 0"));
            }
            if wall.points.len() < 2 {
                return Err(invalid(
                    format!("walls[{i}].points"),
                    "a wall needs at least two points",
                ));
            }
        }
        for (i, b) in self.boxes.iter().enumerate() {
            for axis in 0..3 {
                if !(b.max[axis] > b.min[axis]) {
                    return Err(invalid(
                        format!("boxes[{i}]"),
                        "max must exceed min on every axis",
                    ));
                }
            }
        }
        if let Some(z_max) = self.z_max {
            if !(z_max > 0.0 && z_max <= self.ceiling_height) {
                return Err(invalid("z_max".into(), "must lie in (0, ceiling_height]"));
            }
        }
        if !(self.wind.gust_period_s > 0.0) {
            return Err(invalid("wind.gust_period_s".into(), "must be > 0"));
        }
        if !(self.battery.hover_endurance_s > 0.0) {
            return Err(invalid("battery.hover_endurance_s".into(), "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.battery.low_threshold) {
            return Err(invalid(
                "battery.low_threshold".into(),
                "must lie in [0, 1]",
            ));
        }
        let walls_visible = self.walls.iter().any(|w| w.points.len() >= 2);
        if !walls_visible && self.boxes.is_empty() {
            return Err(invalid("walls".into(), "no laser-visible surface"));
        }
        Ok(())
    }

    /// Vertical surfaces intersecting the horizontal plane at height `z`.
    pub fn segments_at_height(&self, z: f64) -> Vec<Segment> {
        let mut out = Vec::new();
        for wall in &self.walls {
            if z <= wall.height {
                out.extend(wall.points.windows(2).map(|w| Segment::new(w[0], w[1])));
            }
        }
        for b in &self.boxes {
            if z >= b.min[2] && z <= b.max[2] {
                out.extend(b.footprint());
            }
        }
        out
    }

    /// Height of the surface directly below (x, y, z): floor or a box top.
    pub fn floor_below(&self, x: f64, y: f64, z: f64) -> f64 {
        self.boxes
            .iter()
            .filter(|b| b.contains_xy(x, y) && b.max[2] <= z + 1e-9)
            .map(|b| b.max[2])
            .fold(0.0, f64::max)
    }

    /// Height of the surface directly above (x, y, z): ceiling or a box bottom.
    pub fn ceiling_above(&self, x: f64, y: f64, z: f64) -> f64 {
        self.boxes
            .iter()
            .filter(|b| b.contains_xy(x, y) && b.min[2] >= z - 1e-9)
            .map(|b| b.min[2])
            .fold(self.ceiling_height, f64::min)
    }

    /// Exact horizontal distance from a point to the nearest surface at its height.
    pub fn nearest_obstacle(&self, x: f64, y: f64, z: f64) -> Option<(f64, Vector2<f64>)> {
        let p = Vector2::new(x, y);
        self.segments_at_height(z)
            .iter()
            .map(|s| {
                let q = s.closest_point(&p);
                ((q - p).norm(), q)
            })
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }
}

pub fn load_world(path: impl AsRef<Path>) -> Result<WorldModel, WorldError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| WorldError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    WorldModel::from_json(&text)
}
