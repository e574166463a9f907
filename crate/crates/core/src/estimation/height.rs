//! Height and vertical-speed Kalman filter fusing the downward range finder
//! with the barometer. The barometer bias is tracked against the range
//! finder while the latter is trusted, so the barometer can carry the
//! estimate across range outliers and dropouts.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeightFilterConfig {
    /// White vertical acceleration driving the constant-velocity model.
    pub accel_sigma: f64,
    pub range_sigma: f64,
    pub baro_sigma: f64,
    /// Bias random walk, m per sqrt(s).
    pub bias_walk_sigma: f64,
    /// Innovation gate for the range finder in standard deviations.
    pub range_gate: f64,
    /// Seconds a range fix keeps the barometer in bias-tracking mode.
    pub range_hold_s: f64,
}

impl Default for HeightFilterConfig {
    fn default() -> Self {
        Self {
            accel_sigma: 1.0,
            range_sigma: 0.02,
            baro_sigma: 0.1,
            bias_walk_sigma: 0.01,
            range_gate: 5.0,
            range_hold_s: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeightFilterState {
    pub height: f64,
    pub vz: f64,
    pub covariance: Matrix2<f64>,
    pub baro_bias: f64,
    pub baro_bias_var: f64,
    /// Time since the last accepted range measurement.
    pub since_range: f64,
    pub rejected_ranges: u64,
}

impl HeightFilterState {
    pub fn new(height: f64) -> Self {
        Self {
            height,
            vz: 0.0,
            covariance: Matrix2::new(0.01, 0.0, 0.0, 0.01),
            baro_bias: 0.0,
            baro_bias_var: 1.0,
            since_range: f64::INFINITY,
            rejected_ranges: 0,
        }
    }
}

fn scalar_update(state: &mut HeightFilterState, z: f64, r: f64) {
    let p = state.covariance;
    let s = p[(0, 0)] + r;
    let k = Vector2::new(p[(0, 0)], p[(1, 0)]) / s;
    let y = z - state.height;
    state.height += k.x * y;
    state.vz += k.y * y;
    // Joseph form keeps the covariance symmetric positive semi-definite.
    let i_kh = Matrix2::new(1.0 - k.x, 0.0, -k.y, 1.0);
    let p = i_kh * p * i_kh.transpose() + k * k.transpose() * r;
    state.covariance = 0.5 * (p + p.transpose());
}

/// One predict/update cycle. Absent measurements mean prediction only.
pub fn update_height(
    state: &HeightFilterState,
    baro: Option<f64>,
    range_down: Option<f64>,
    dt: f64,
    config: &HeightFilterConfig,
) -> HeightFilterState {
    debug_assert!(dt > 0.0);
    let mut s = *state;

    let f = Matrix2::new(1.0, dt, 0.0, 1.0);
    let q = config.accel_sigma.powi(2)
        * Matrix2::new(
            dt.powi(4) / 4.0,
            dt.powi(3) / 2.0,
            dt.powi(3) / 2.0,
            dt * dt,
        );
    s.height += s.vz * dt;
    let p = f * s.covariance * f.transpose() + q;
    s.covariance = 0.5 * (p + p.transpose());
    s.baro_bias_var += config.bias_walk_sigma.powi(2) * dt;
    s.since_range += dt;

    if let Some(r) = range_down {
        let rr = config.range_sigma.powi(2);
        let innovation = r - s.height;
        let gate = config.range_gate * (s.covariance[(0, 0)] + rr).sqrt();
        if innovation.abs() <= gate {
            scalar_update(&mut s, r, rr);
            s.since_range = 0.0;
        } else {
            s.rejected_ranges += 1;
        }
    }

    if let Some(b) = baro {
        let rb = config.baro_sigma.powi(2);
        if s.since_range <= config.range_hold_s {
            // Height is pinned by the range finder: learn the barometer bias.
            let var = rb + s.covariance[(0, 0)];
            let k = s.baro_bias_var / (s.baro_bias_var + var);
            s.baro_bias += k * ((b - s.height) - s.baro_bias);
            s.baro_bias_var *= 1.0 - k;
        } else {
            let (z, r) = (b - s.baro_bias, rb + s.baro_bias_var);
            scalar_update(&mut s, z, r);
        }
    }
    s
}
