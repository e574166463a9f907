use nalgebra::{Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::sim::{LaserScan, SensorFrame, GRAVITY};

/// Largest roll or pitch for which tilt compensation is trusted.
pub const MAX_COMPENSATED_TILT: f64 = 0.35;

/// One valid return projected onto the horizontal plane of the heading frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub beam: usize,
    pub point: Vector2<f64>,
}

impl ScanPoint {
    pub fn range(&self) -> f64 {
        self.point.norm()
    }

    pub fn bearing(&self) -> f64 {
        self.point.y.atan2(self.point.x)
    }
}

/// A laser scan after roll/pitch compensation, valid returns only, in beam order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanarScan {
    pub points: Vec<ScanPoint>,
}

impl PlanarScan {
    pub fn from_points(points: impl IntoIterator<Item = Vector2<f64>>) -> Self {
        Self {
            points: points
                .into_iter()
                .enumerate()
                .map(|(beam, point)| ScanPoint { beam, point })
                .collect(),
        }
    }

    /// Project a raw scan taken at the given attitude onto the horizontal plane.
    pub fn project(scan: &LaserScan, roll: f64, pitch: f64) -> Self {
        let level = Rotation3::from_euler_angles(roll, pitch, 0.0);
        let points = scan
            .ranges
            .iter()
            .enumerate()
            .filter(|(_, r)| LaserScan::is_return(**r))
            .map(|(beam, r)| {
                let a = scan.angle(beam);
                let p = level * Vector3::new(r * a.cos(), r * a.sin(), 0.0);
                ScanPoint {
                    beam,
                    point: p.xy(),
                }
            })
            .collect();
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn min_range(&self) -> Option<f64> {
        self.points
            .iter()
            .map(ScanPoint::range)
            .min_by(f64::total_cmp)
    }

    /// Rigidly move every point: `R(dpsi) p + t`.
    pub fn transformed(&self, dx: f64, dy: f64, dpsi: f64) -> Self {
        let (s, c) = dpsi.sin_cos();
        Self {
            points: self
                .points
                .iter()
                .map(|sp| ScanPoint {
                    beam: sp.beam,
                    point: Vector2::new(
                        c * sp.point.x - s * sp.point.y + dx,
                        s * sp.point.x + c * sp.point.y + dy,
                    ),
                })
                .collect(),
        }
    }
}

/// Sensor frame after bias handling and roll/pitch compensation.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrectedFrame {
    pub timestamp: f64,
    /// False when the attitude is outside the compensation envelope; consumers
    /// then skip measurement updates.
    pub usable: bool,
    pub scan: Option<PlanarScan>,
    /// Vertical distance to the surface below.
    pub height: Option<f64>,
    /// Vertical distance to the surface above.
    pub ceiling: Option<f64>,
    /// Heading-frame acceleration with gravity removed.
    pub accel: Option<Vector3<f64>>,
    pub gyro: Option<Vector3<f64>>,
    pub attitude: Option<Vector3<f64>>,
    pub baro: Option<f64>,
    pub uwb: Option<Vector3<f64>>,
}

/// Tilt-compensate a frame using the given roll and pitch.
pub fn preprocess(frame: &SensorFrame, roll: f64, pitch: f64) -> CorrectedFrame {
    let usable = roll.abs() < MAX_COMPENSATED_TILT && pitch.abs() < MAX_COMPENSATED_TILT;
    let tilt = roll.cos() * pitch.cos();
    let level = Rotation3::from_euler_angles(roll, pitch, 0.0);
    let (scan, height, ceiling, accel) = if usable {
        (
            frame
                .laser
                .as_ref()
                .map(|s| PlanarScan::project(s, roll, pitch)),
            frame.range_down.map(|r| r * tilt),
            frame.range_up.map(|r| r * tilt),
            frame
                .imu
                .map(|imu| level * imu.accel + Vector3::new(0.0, 0.0, GRAVITY)),
        )
    } else {
        (None, None, None, None)
    };
    CorrectedFrame {
        timestamp: frame.timestamp,
        usable,
        scan,
        height,
        ceiling,
        accel,
        gyro: frame.imu.map(|i| i.gyro),
        attitude: frame.imu.map(|i| i.attitude),
        baro: frame.baro,
        uwb: frame.uwb,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::ImuSample;

    fn frame() -> SensorFrame {
        SensorFrame {
            timestamp: 0.0,
            laser: None,
            range_down: Some(2.0),
            range_up: None,
            imu: Some(ImuSample {
                accel: Vector3::new(0.0, 0.0, -GRAVITY),
                gyro: Vector3::zeros(),
                attitude: Vector3::zeros(),
            }),
            baro: None,
            uwb: None,
        }
    }

    #[test]
    fn level_range_passes_through() {
        assert_eq!(preprocess(&frame(), 0.0, 0.0).height, Some(2.0));
    }

    #[test]
    fn rolled_range_is_compensated() {
        let mut f = frame();
        f.range_down = Some(2.0407);
        let h = preprocess(&f, 0.2, 0.0).height.unwrap();
        assert!((h - 2.0).abs() < 1e-3, "{h}");
    }

    #[test]
    fn gravity_cancels_at_rest() {
        let a = preprocess(&frame(), 0.0, 0.0).accel.unwrap();
        assert!(a.norm() < 1e-12);
    }

    #[test]
    fn gravity_cancels_when_tilted_at_rest() {
        let (roll, pitch) = (0.1, -0.2);
        let mut f = frame();
        let body_g = Rotation3::from_euler_angles(roll, pitch, 0.0).inverse()
            * Vector3::new(0.0, 0.0, -GRAVITY);
        f.imu.as_mut().unwrap().accel = body_g;
        assert!(preprocess(&f, roll, pitch).accel.unwrap().norm() < 1e-12);
    }

    #[test]
    fn excessive_tilt_flags_frame() {
        let c = preprocess(&frame(), 0.4, 0.0);
        assert!(!c.usable);
        assert!(c.height.is_none());
    }
}
