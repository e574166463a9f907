use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Full estimated kinematic state published to the control stack. Pose and
/// velocities are in the world frame; angular rates are body rates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub timestamp: f64,
    pub position: Vector3<f64>,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    pub angular_rates: Vector3<f64>,
}

impl VehicleState {
    pub fn at(position: Vector3<f64>, yaw: f64) -> Self {
        Self {
            timestamp: 0.0,
            position,
            roll: 0.0,
            pitch: 0.0,
            yaw,
            velocity: Vector3::zeros(),
            acceleration: Vector3::zeros(),
            angular_rates: Vector3::zeros(),
        }
    }

    /// World-frame horizontal vector expressed in the heading frame.
    pub fn to_body(&self, v: &Vector3<f64>) -> Vector3<f64> {
        let (s, c) = self.yaw.sin_cos();
        Vector3::new(c * v.x + s * v.y, -s * v.x + c * v.y, v.z)
    }

    /// Heading-frame vector expressed in the world frame.
    pub fn to_world(&self, v: &Vector3<f64>) -> Vector3<f64> {
        let (s, c) = self.yaw.sin_cos();
        Vector3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z)
    }

    pub fn body_velocity(&self) -> Vector3<f64> {
        self.to_body(&self.velocity)
    }
}
