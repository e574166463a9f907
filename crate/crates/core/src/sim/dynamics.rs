//! Point-mass vehicle with a simulated flight-management inner loop.
//!
//! Roll, pitch and yaw rate follow their setpoints through first-order lags;
//! vertical speed follows its setpoint with a slower lag. Horizontal
//! acceleration comes from the tilt (`g * tan(tilt)`), linear drag and wind.

use nalgebra::{Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

pub const GRAVITY: f64 = 9.81;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleTruth {
    /// World frame, z up.
    pub position: Vector3<f64>,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub yaw_rate: f64,
    /// Euler angle rates (roll, pitch, yaw).
    pub attitude_rates: Vector3<f64>,
    /// World frame.
    pub velocity: Vector3<f64>,
    /// Kinematic acceleration expressed in the body frame.
    pub body_accel: Vector3<f64>,
    pub battery_fraction: f64,
}

impl VehicleTruth {
    pub fn at_rest(x: f64, y: f64, yaw: f64) -> Self {
        Self {
            position: Vector3::new(x, y, 0.0),
            roll: 0.0,
            pitch: 0.0,
            yaw,
            yaw_rate: 0.0,
            attitude_rates: Vector3::zeros(),
            velocity: Vector3::zeros(),
            body_accel: Vector3::zeros(),
            battery_fraction: 1.0,
        }
    }

    pub fn hovering(position: Vector3<f64>, yaw: f64) -> Self {
        Self {
            position,
            ..Self::at_rest(0.0, 0.0, yaw)
        }
    }

    pub fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_euler_angles(self.roll, self.pitch, self.yaw)
    }
}

/// Commands accepted by the inner loop.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InnerLoopSetpoint {
    pub roll: f64,
    pub pitch: f64,
    pub vz: f64,
    pub yaw_rate: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetpointLimits {
    pub tilt: f64,
    pub vz: f64,
    pub yaw_rate: f64,
}

impl Default for SetpointLimits {
    fn default() -> Self {
        Self {
            tilt: 0.35,
            vz: 1.0,
            yaw_rate: 1.0,
        }
    }
}

impl InnerLoopSetpoint {
    pub fn clamped(self, limits: &SetpointLimits) -> Self {
        Self {
            roll: self.roll.clamp(-limits.tilt, limits.tilt),
            pitch: self.pitch.clamp(-limits.tilt, limits.tilt),
            vz: self.vz.clamp(-limits.vz, limits.vz),
            yaw_rate: self.yaw_rate.clamp(-limits.yaw_rate, limits.yaw_rate),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsParams {
    pub tau_attitude: f64,
    pub tau_vz: f64,
    /// Linear drag, 1/s.
    pub k_drag: f64,
    /// Wind coupling, 1/s. Terminal drift speed is `k_wind / k_drag` times the wind speed.
    pub k_wind: f64,
    pub limits: SetpointLimits,
    pub hover_endurance_s: f64,
}

impl Default for DynamicsParams {
    fn default() -> Self {
        Self {
            tau_attitude: 0.15,
            tau_vz: 0.3,
            k_drag: 0.3,
            k_wind: 0.3,
            limits: SetpointLimits::default(),
            hover_endurance_s: 1200.0,
        }
    }
}

fn lag(current: f64, target: f64, dt: f64, tau: f64) -> f64 {
    target + (current - target) * (-dt / tau).exp()
}

/// Advance the airborne vehicle by `dt` seconds (motors on).
///
/// `wind` is the wind velocity at the start of the step.
pub fn step_dynamics(
    truth: &VehicleTruth,
    setpoint: &InnerLoopSetpoint,
    wind: [f64; 3],
    dt: f64,
    params: &DynamicsParams,
) -> VehicleTruth {
    debug_assert!(dt > 0.0 && dt <= 0.02 + 1e-12, "dt out of range: {dt}");
    let sp = setpoint.clamped(&params.limits);

    let roll = lag(truth.roll, sp.roll, dt, params.tau_attitude);
    let pitch = lag(truth.pitch, sp.pitch, dt, params.tau_attitude);
    let yaw_rate = lag(truth.yaw_rate, sp.yaw_rate, dt, params.tau_attitude);
    let yaw = crate::wrap_angle(truth.yaw + 0.5 * (truth.yaw_rate + yaw_rate) * dt);

    // Tilt acceleration in the heading frame, trapezoid over the lagged attitude.
    let ax_h = GRAVITY * 0.5 * (truth.pitch.tan() + pitch.tan());
    let ay_h = -GRAVITY * 0.5 * (truth.roll.tan() + roll.tan());
    let mid_yaw = truth.yaw + 0.25 * (truth.yaw_rate + yaw_rate) * dt;
    let (s, c) = mid_yaw.sin_cos();
    let forcing = Vector2::new(
        c * ax_h - s * ay_h + params.k_wind * wind[0],
        s * ax_h + c * ay_h + params.k_wind * wind[1],
    );

    let v0 = truth.velocity.xy();
    let (v1, dp) = if params.k_drag > 0.0 {
        let k = params.k_drag;
        let terminal = forcing / k;
        let decay = (-k * dt).exp();
        let v1 = terminal + (v0 - terminal) * decay;
        let dp = terminal * dt + (v0 - terminal) * ((1.0 - decay) / k);
        (v1, dp)
    } else {
        (v0 + forcing * dt, v0 * dt + forcing * (0.5 * dt * dt))
    };

    let vz0 = truth.velocity.z;
    let mut vz1 = lag(vz0, sp.vz, dt, params.tau_vz) + params.k_wind * wind[2] * dt;
    let mut z = truth.position.z + 0.5 * (vz0 + vz1) * dt;
    let mut vh = v1;
    let mut pxy = truth.position.xy() + dp;
    if z <= 0.0 {
        z = 0.0;
        vz1 = vz1.max(0.0);
        if sp.vz <= 0.0 {
            // Skids rest on the floor.
            vh = Vector2::zeros();
            pxy = truth.position.xy();
        }
    }

    let velocity = Vector3::new(vh.x, vh.y, vz1);
    let accel_world = (velocity - truth.velocity) / dt;
    let rotation = Rotation3::from_euler_angles(roll, pitch, yaw);
    let body_accel = rotation.inverse() * accel_world;
    let battery_fraction = (truth.battery_fraction - dt / params.hover_endurance_s).max(0.0);

    VehicleTruth {
        position: Vector3::new(pxy.x, pxy.y, z),
        roll,
        pitch,
        yaw,
        yaw_rate,
        attitude_rates: Vector3::new(
            (roll - truth.roll) / dt,
            (pitch - truth.pitch) / dt,
            yaw_rate,
        ),
        velocity,
        body_accel,
        battery_fraction,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DT: f64 = 0.01;

    fn run(
        truth: VehicleTruth,
        sp: InnerLoopSetpoint,
        wind: [f64; 3],
        secs: f64,
        p: &DynamicsParams,
    ) -> VehicleTruth {
        let steps = (secs / DT).round() as usize;
        (0..steps).fold(truth, |t, _| step_dynamics(&t, &sp, wind, DT, p))
    }

    #[test]
    fn hover_equilibrium_is_stationary() {
        let start = VehicleTruth::hovering(Vector3::new(1.0, 2.0, 1.5), 0.3);
        let end = run(
            start,
            InnerLoopSetpoint::default(),
            [0.0; 3],
            5.0,
            &DynamicsParams::default(),
        );
        assert!((end.position - start.position).norm() < 1e-9);
        assert!(end.velocity.norm() < 1e-12);
    }

    /// Closed-form oracle: speed after one second of pitch-lag forcing,
    /// by composite Simpson quadrature of g * tan(0.1 (1 - exp(-t / tau))).
    fn pitch_step_oracle(tau: f64) -> f64 {
        let n = 20_000;
        let h = 1.0 / n as f64;
        let f = |t: f64| GRAVITY * (0.1 * (1.0 - (-t / tau).exp())).tan();
        let mut acc = f(0.0) + f(1.0);
        for i in 1..n {
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn pitch_step_matches_first_order_lag_oracle() {
        let p = DynamicsParams {
            k_drag: 0.0,
            k_wind: 0.0,
            ..DynamicsParams::default()
        };
        let sp = InnerLoopSetpoint {
            pitch: 0.1,
            ..Default::default()
        };
        let start = VehicleTruth::hovering(Vector3::new(0.0, 0.0, 2.0), 0.0);
        let end = run(start, sp, [0.0; 3], 1.0, &p);
        let oracle = pitch_step_oracle(p.tau_attitude);
        assert!(
            (end.velocity.x - oracle).abs() < 1e-4,
            "{} vs {oracle}",
            end.velocity.x
        );
        // Small-angle closed form g tan(0.1) (1 - tau (1 - e^{-1/tau})) agrees to the tan curvature.
        let tau = p.tau_attitude;
        let approx = GRAVITY * 0.1f64.tan() * (1.0 - tau * (1.0 - (-1.0 / tau).exp()));
        assert!((end.velocity.x - approx).abs() / approx < 5e-3);
        assert!(end.velocity.y.abs() < 1e-12);
    }

    #[test]
    fn constant_wind_drifts_at_terminal_velocity() {
        let p = DynamicsParams::default();
        let start = VehicleTruth::hovering(Vector3::new(0.0, 0.0, 2.0), 0.0);
        let end = run(
            start,
            InnerLoopSetpoint::default(),
            [1.0, 0.0, 0.0],
            40.0,
            &p,
        );
        let terminal = p.k_wind / p.k_drag;
        assert!((end.velocity.x - terminal).abs() < 1e-4);
    }

    #[test]
    fn yawed_vehicle_accelerates_along_heading() {
        let p = DynamicsParams::default();
        let start =
            VehicleTruth::hovering(Vector3::new(0.0, 0.0, 2.0), std::f64::consts::FRAC_PI_2);
        let sp = InnerLoopSetpoint {
            pitch: 0.1,
            ..Default::default()
        };
        let end = run(start, sp, [0.0; 3], 1.0, &p);
        assert!(end.velocity.y > 0.5);
        assert!(end.velocity.x.abs() < 1e-9);
    }

    #[test]
    fn positive_roll_moves_right() {
        let p = DynamicsParams::default();
        let start = VehicleTruth::hovering(Vector3::new(0.0, 0.0, 2.0), 0.0);
        let sp = InnerLoopSetpoint {
            roll: 0.1,
            ..Default::default()
        };
        let end = run(start, sp, [0.0; 3], 1.0, &p);
        assert!(end.velocity.y < -0.5);
    }

    #[test]
    fn floor_stops_descent() {
        let p = DynamicsParams::default();
        let start = VehicleTruth::hovering(Vector3::new(0.0, 0.0, 0.2), 0.0);
        let sp = InnerLoopSetpoint {
            vz: -1.0,
            ..Default::default()
        };
        let end = run(start, sp, [0.0; 3], 3.0, &p);
        assert_eq!(end.position.z, 0.0);
        assert_eq!(end.velocity.z, 0.0);
    }

    #[test]
    fn setpoints_are_clamped() {
        let sp = InnerLoopSetpoint {
            roll: 1.0,
            pitch: -1.0,
            vz: 3.0,
            yaw_rate: -2.0,
        }
        .clamped(&SetpointLimits::default());
        assert_eq!(
            sp,
            InnerLoopSetpoint {
                roll: 0.35,
                pitch: -0.35,
                vz: 1.0,
                yaw_rate: -1.0
            }
        );
    }

    #[test]
    fn battery_drains_monotonically() {
        let p = DynamicsParams::default();
        let mut t = VehicleTruth::hovering(Vector3::new(0.0, 0.0, 1.0), 0.0);
        for _ in 0..500 {
            let next = step_dynamics(&t, &InnerLoopSetpoint::default(), [0.0; 3], DT, &p);
            assert!(next.battery_fraction <= t.battery_fraction);
            t = next;
        }
        assert!(t.battery_fraction < 1.0);
    }
}
