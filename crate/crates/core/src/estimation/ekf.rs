//! Local/global EKF cascade.
//!
//! The local filter integrates velocity, yaw and height into a drifting
//! odometry frame. The global filter is driven by local-pose increments and
//! corrected by horizontal absolute fixes. Height is absolute already and
//! passes through unchanged. Information flows local to global only.

use nalgebra::{SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::wrap_angle;

pub type LocalVector = SVector<f64, 7>;
pub type LocalCovariance = SMatrix<f64, 7, 7>;
pub type GlobalVector = SVector<f64, 4>;
pub type GlobalCovariance = SMatrix<f64, 4, 4>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EkfConfig {
    /// Local process noise: white acceleration, m/s² per sqrt(Hz).
    pub accel_sigma: f64,
    pub yaw_rate_sigma: f64,
    pub velocity_sigma: f64,
    pub yaw_sigma: f64,
    pub height_sigma: f64,
    /// Global horizontal random walk, m per sqrt(s).
    pub global_walk_sigma: f64,
    /// Horizontal uncertainty of the start pose, m.
    pub initial_position_sigma: f64,
    /// Global odometry noise as a fraction of distance travelled.
    pub odometry_fraction: f64,
    pub global_yaw_walk_sigma: f64,
    pub uwb_sigma: f64,
    /// Per-axis innovation gate for absolute fixes in standard deviations.
    pub uwb_gate: f64,
    /// Accept a fix anyway after this many consecutive rejections.
    pub uwb_max_rejections: u32,
    /// Global covariance trace above which localization is reported degraded.
    pub trace_cap: f64,
}

impl Default for EkfConfig {
    fn default() -> Self {
        Self {
            accel_sigma: 1.0,
            yaw_rate_sigma: 0.1,
            velocity_sigma: 0.05,
            yaw_sigma: 0.01,
            height_sigma: 0.03,
            global_walk_sigma: 0.001,
            initial_position_sigma: 0.005,
            odometry_fraction: 0.02,
            global_yaw_walk_sigma: 0.001,
            uwb_sigma: 0.15,
            uwb_gate: 3.0,
            uwb_max_rejections: 15,
            trace_cap: 4.0,
        }
    }
}

/// Rigid transform taking local-frame coordinates to the global frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameOffset {
    pub translation: Vector3<f64>,
    pub yaw: f64,
}

impl FrameOffset {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let (s, c) = self.yaw.sin_cos();
        Vector3::new(c * p.x - s * p.y, s * p.x + c * p.y, p.z) + self.translation
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixOutcome {
    pub accepted: bool,
    pub rejected: bool,
    /// Accepted only because the rejection streak hit the limit.
    pub forced: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EkfState {
    /// `(x, y, z, vx, vy, vz, yaw)` in the local odometry frame.
    pub local: LocalVector,
    pub local_covariance: LocalCovariance,
    /// `(x, y, z, yaw)` in the global frame.
    pub global: GlobalVector,
    pub global_covariance: GlobalCovariance,
    pub offset: FrameOffset,
    /// Local pose at the previous step, for increments.
    prev_local: SVector<f64, 4>,
    pub uwb_rejections: u32,
    pub last_fix: FixOutcome,
    pub degraded: bool,
}

impl EkfState {
    /// Local frame starts at the origin with the given heading; the global
    /// frame starts at the known initial pose.
    pub fn new(initial_position: Vector3<f64>, initial_yaw: f64) -> Self {
        let local = LocalVector::from_column_slice(&[
            0.0,
            0.0,
            initial_position.z,
            0.0,
            0.0,
            0.0,
            initial_yaw,
        ]);
        let global = GlobalVector::new(
            initial_position.x,
            initial_position.y,
            initial_position.z,
            initial_yaw,
        );
        let mut s = Self {
            local,
            local_covariance: LocalCovariance::from_diagonal(&LocalVector::from_element(1e-4)),
            global,
            global_covariance: GlobalCovariance::from_diagonal(&GlobalVector::from_element(1e-4)),
            offset: FrameOffset {
                translation: Vector3::zeros(),
                yaw: 0.0,
            },
            prev_local: SVector::<f64, 4>::new(0.0, 0.0, initial_position.z, initial_yaw),
            uwb_rejections: 0,
            last_fix: FixOutcome::default(),
            degraded: false,
        };
        s.refresh_offset();
        s
    }

    pub fn local_position(&self) -> Vector3<f64> {
        Vector3::new(self.local[0], self.local[1], self.local[2])
    }

    pub fn local_velocity(&self) -> Vector3<f64> {
        Vector3::new(self.local[3], self.local[4], self.local[5])
    }

    /// Start with the horizontal global position known to `sigma`.
    pub fn with_position_sigma(mut self, sigma: f64) -> Self {
        self.global_covariance[(0, 0)] = sigma * sigma;
        self.global_covariance[(1, 1)] = sigma * sigma;
        self
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.global[0], self.global[1], self.global[2])
    }

    pub fn yaw(&self) -> f64 {
        self.global[3]
    }

    /// Local velocity expressed in the global frame.
    pub fn velocity(&self) -> Vector3<f64> {
        let v = self.local_velocity();
        let (s, c) = self.offset.yaw.sin_cos();
        Vector3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z)
    }

    fn refresh_offset(&mut self) {
        let yaw = wrap_angle(self.global[3] - self.local[6]);
        let (s, c) = yaw.sin_cos();
        let l = self.local_position();
        let rotated = Vector3::new(c * l.x - s * l.y, s * l.x + c * l.y, l.z);
        self.offset = FrameOffset {
            translation: self.position() - rotated,
            yaw,
        };
    }
}

fn symmetrize<const N: usize>(p: SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    (p + p.transpose()) * 0.5
}

/// Joseph-form linear update. Returns false if the innovation covariance is singular.
fn kalman_update<const N: usize, const M: usize>(
    x: &mut SVector<f64, N>,
    p: &mut SMatrix<f64, N, N>,
    innovation: SVector<f64, M>,
    h: SMatrix<f64, M, N>,
    r: SMatrix<f64, M, M>,
) -> bool {
    let s = h * *p * h.transpose() + r;
    let Some(s_inv) = s.try_inverse() else {
        return false;
    };
    let k = *p * h.transpose() * s_inv;
    *x += k * innovation;
    let i_kh = SMatrix::<f64, N, N>::identity() - k * h;
    *p = symmetrize(i_kh * *p * i_kh.transpose() + k * r * k.transpose());
    true
}

fn predict_local(ekf: &mut EkfState, dt: f64, config: &EkfConfig) {
    let mut f = LocalCovariance::identity();
    for i in 0..3 {
        f[(i, i + 3)] = dt;
    }
    ekf.local = f * ekf.local;
    ekf.local[6] = wrap_angle(ekf.local[6]);

    let qa = config.accel_sigma.powi(2);
    let mut q = LocalCovariance::zeros();
    for i in 0..3 {
        q[(i, i)] = qa * dt.powi(4) / 4.0;
        q[(i, i + 3)] = qa * dt.powi(3) / 2.0;
        q[(i + 3, i)] = qa * dt.powi(3) / 2.0;
        q[(i + 3, i + 3)] = qa * dt * dt;
    }
    q[(6, 6)] = config.yaw_rate_sigma.powi(2) * dt;
    ekf.local_covariance = symmetrize(f * ekf.local_covariance * f.transpose() + q);
}

fn predict_global(ekf: &mut EkfState, dt: f64, config: &EkfConfig) {
    let cur = SVector::<f64, 4>::new(ekf.local[0], ekf.local[1], ekf.local[2], ekf.local[6]);
    let d = cur - ekf.prev_local;
    let dyaw = wrap_angle(d[3]);
    ekf.prev_local = cur;

    let delta_heading = wrap_angle(ekf.global[3] - (cur[3] - dyaw));
    let (s, c) = delta_heading.sin_cos();
    let gx = c * d[0] - s * d[1];
    let gy = s * d[0] + c * d[1];
    ekf.global[0] += gx;
    ekf.global[1] += gy;
    ekf.global[2] += d[2];
    ekf.global[3] = wrap_angle(ekf.global[3] + dyaw);

    let mut f = GlobalCovariance::identity();
    f[(0, 3)] = -gy;
    f[(1, 3)] = gx;
    let travelled = d[0].hypot(d[1]);
    let qp = config.global_walk_sigma.powi(2) * dt + (config.odometry_fraction * travelled).powi(2);
    let q = GlobalCovariance::from_diagonal(&GlobalVector::new(
        qp,
        qp,
        0.0,
        config.global_yaw_walk_sigma.powi(2) * dt,
    ));
    ekf.global_covariance = symmetrize(f * ekf.global_covariance * f.transpose() + q);
}

fn update_fix(ekf: &mut EkfState, fix: &Vector3<f64>, config: &EkfConfig) -> FixOutcome {
    let innovation = (fix - ekf.position()).xy();
    let r = config.uwb_sigma.powi(2);
    let gated = (0..2).all(|i| {
        let s = ekf.global_covariance[(i, i)] + r;
        innovation[i] * innovation[i] <= config.uwb_gate.powi(2) * s
    });
    let forced = !gated && ekf.uwb_rejections + 1 >= config.uwb_max_rejections;
    if !gated && !forced {
        ekf.uwb_rejections += 1;
        return FixOutcome {
            rejected: true,
            ..FixOutcome::default()
        };
    }
    let mut h = SMatrix::<f64, 2, 4>::zeros();
    for i in 0..2 {
        h[(i, i)] = 1.0;
    }
    kalman_update(
        &mut ekf.global,
        &mut ekf.global_covariance,
        innovation,
        h,
        SMatrix::<f64, 2, 2>::from_diagonal_element(r),
    );
    ekf.global[3] = wrap_angle(ekf.global[3]);
    ekf.uwb_rejections = 0;
    FixOutcome {
        accepted: true,
        rejected: false,
        forced,
    }
}

/// Measurements available for one estimator step. Velocity is in the local
/// frame, which shares its heading reference with the IMU yaw.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EkfMeasurements {
    pub velocity: Option<Vector3<f64>>,
    pub yaw: Option<f64>,
    pub height: Option<f64>,
    pub fix: Option<Vector3<f64>>,
}

/// Advance both filters by `dt` and apply whatever measurements are present.
pub fn ekf_step(ekf: &EkfState, m: &EkfMeasurements, dt: f64, config: &EkfConfig) -> EkfState {
    debug_assert!(dt > 0.0);
    let mut e = ekf.clone();
    predict_local(&mut e, dt, config);

    if let Some(v) = m.velocity {
        let mut h = SMatrix::<f64, 3, 7>::zeros();
        for i in 0..3 {
            h[(i, i + 3)] = 1.0;
        }
        let innovation = v - e.local_velocity();
        kalman_update(
            &mut e.local,
            &mut e.local_covariance,
            innovation,
            h,
            SMatrix::<f64, 3, 3>::from_diagonal_element(config.velocity_sigma.powi(2)),
        );
    }
    if let Some(yaw) = m.yaw {
        let mut h = SMatrix::<f64, 1, 7>::zeros();
        h[6] = 1.0;
        let innovation = SVector::<f64, 1>::new(wrap_angle(yaw - e.local[6]));
        kalman_update(
            &mut e.local,
            &mut e.local_covariance,
            innovation,
            h,
            SMatrix::<f64, 1, 1>::new(config.yaw_sigma.powi(2)),
        );
        e.local[6] = wrap_angle(e.local[6]);
    }
    if let Some(z) = m.height {
        let mut h = SMatrix::<f64, 1, 7>::zeros();
        h[2] = 1.0;
        let innovation = SVector::<f64, 1>::new(z - e.local[2]);
        kalman_update(
            &mut e.local,
            &mut e.local_covariance,
            innovation,
            h,
            SMatrix::<f64, 1, 1>::new(config.height_sigma.powi(2)),
        );
    }

    predict_global(&mut e, dt, config);
    e.last_fix = match m.fix {
        Some(fix) => update_fix(&mut e, &fix, config),
        None => FixOutcome::default(),
    };
    e.refresh_offset();
    e.degraded = e.global_covariance.trace() > config.trace_cap;
    e
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const DT: f64 = 0.01;

    fn assert_psd<const N: usize>(p: &SMatrix<f64, N, N>) {
        assert!((p - p.transpose()).amax() < 1e-9);
        let d = nalgebra::DMatrix::from_column_slice(N, N, p.as_slice());
        assert!(d.symmetric_eigenvalues().min() > -1e-9, "{p}");
    }

    #[test]
    fn prediction_only_holds_position_and_grows_covariance() {
        let cfg = EkfConfig::default();
        let mut e = EkfState::new(Vector3::new(1.0, 2.0, 1.5), 0.3);
        let m = EkfMeasurements::default();
        let mut trace = e.global_covariance.trace();
        let mut local_trace = e.local_covariance.trace();
        for _ in 0..1000 {
            e = ekf_step(&e, &m, DT, &cfg);
            assert!(e.global_covariance.trace() > trace);
            assert!(e.local_covariance.trace() > local_trace);
            trace = e.global_covariance.trace();
            local_trace = e.local_covariance.trace();
        }
        assert!((e.position() - Vector3::new(1.0, 2.0, 1.5)).norm() < 1e-12);
        assert!((e.yaw() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn dead_reckoning_is_local_plus_initial_offset() {
        let cfg = EkfConfig::default();
        let start = Vector3::new(3.0, -1.0, 0.0);
        let mut e = EkfState::new(start, 0.0);
        for k in 0..500 {
            let v = Vector3::new(0.4, (k as f64 * 0.01).sin() * 0.2, 0.1);
            let m = EkfMeasurements {
                velocity: Some(v),
                yaw: Some(0.0),
                height: None,
                fix: None,
            };
            e = ekf_step(&e, &m, DT, &cfg);
        }
        let expected = e.local_position() + Vector3::new(start.x, start.y, 0.0);
        assert!((e.position() - expected).norm() < 1e-9);
    }

    /// Independent scalar Kalman filter on the x axis.
    #[test]
    fn fix_moves_toward_truth_by_scalar_gain() {
        let cfg = EkfConfig::default();
        let mut e = EkfState::new(Vector3::new(0.5, 0.0, 1.0), 0.0);
        e.global_covariance =
            GlobalCovariance::from_diagonal(&GlobalVector::new(0.25, 0.25, 0.25, 1e-4));
        let m = EkfMeasurements {
            fix: Some(Vector3::new(0.0, 0.0, 1.0)),
            ..EkfMeasurements::default()
        };
        let after = ekf_step(&e, &m, DT, &cfg);

        let p = 0.25 + cfg.global_walk_sigma.powi(2) * DT;
        let r = cfg.uwb_sigma.powi(2);
        let k = p / (p + r);
        let expected = 0.5 + k * (0.0 - 0.5);
        assert!(after.last_fix.accepted);
        assert!(
            (after.position().x - expected).abs() < 1e-12,
            "{} vs {expected}",
            after.position().x
        );
        assert!((after.global_covariance[(0, 0)] - (1.0 - k) * p).abs() < 1e-12);
    }

    #[test]
    fn outlier_fixes_are_gated_then_forced() {
        let cfg = EkfConfig::default();
        let mut e = EkfState::new(Vector3::new(0.0, 0.0, 1.0), 0.0);
        let m = EkfMeasurements {
            fix: Some(Vector3::new(5.0, 0.0, 1.0)),
            ..EkfMeasurements::default()
        };
        for i in 1..cfg.uwb_max_rejections {
            e = ekf_step(&e, &m, DT, &cfg);
            assert!(e.last_fix.rejected);
            assert_eq!(e.uwb_rejections, i);
            assert_eq!(e.position().x, 0.0);
        }
        e = ekf_step(&e, &m, DT, &cfg);
        assert!(e.last_fix.accepted && e.last_fix.forced);
        assert!(e.position().x > 0.0);
    }

    #[test]
    fn diverging_covariance_flags_degraded() {
        let cfg = EkfConfig {
            trace_cap: 0.01,
            global_walk_sigma: 0.01,
            ..EkfConfig::default()
        };
        let mut e = EkfState::new(Vector3::zeros(), 0.0);
        let m = EkfMeasurements::default();
        let mut flagged = false;
        for _ in 0..100_000 {
            e = ekf_step(&e, &m, DT, &cfg);
            if e.degraded {
                flagged = true;
                break;
            }
        }
        assert!(flagged);
    }

    #[test]
    fn rotated_offset_moves_global_along_global_heading() {
        let cfg = EkfConfig::default();
        let mut e = EkfState::new(Vector3::zeros(), 0.0);
        // Global heading differs from local heading by 90 degrees.
        e.global[3] = std::f64::consts::FRAC_PI_2;
        for _ in 0..100 {
            let m = EkfMeasurements {
                velocity: Some(Vector3::new(1.0, 0.0, 0.0)),
                yaw: Some(0.0),
                ..EkfMeasurements::default()
            };
            e = ekf_step(&e, &m, DT, &cfg);
        }
        let p = e.position();
        assert!(p.x.abs() < 0.05 && p.y > 0.8, "{p}");
        assert!((e.offset.yaw - std::f64::consts::FRAC_PI_2).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn covariances_stay_symmetric_psd(seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let cfg = EkfConfig::default();
            let mut e = EkfState::new(Vector3::new(0.0, 0.0, 1.0), 0.0);
            for k in 0..500 {
                let m = EkfMeasurements {
                    velocity: rng.random_bool(0.3).then(|| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5))),
                    yaw: rng.random_bool(0.5).then(|| rng.random_range(-3.1..3.1)),
                    height: rng.random_bool(0.2).then(|| rng.random_range(0.0..3.0)),
                    fix: (k % 20 == 0).then(|| Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(0.0..3.0))),
                };
                e = ekf_step(&e, &m, DT, &cfg);
                assert_psd(&e.local_covariance);
                assert_psd(&e.global_covariance);
            }
        }
    }
}
