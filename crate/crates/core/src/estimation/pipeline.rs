use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::ekf::{ekf_step, EkfConfig, EkfMeasurements, EkfState};
use super::height::{update_height, HeightFilterConfig, HeightFilterState};
use super::preprocess::{preprocess, PlanarScan};
use super::scan_match::{match_scans, IcpConfig, ScanMatchResult};
use super::state::VehicleState;
use super::velocity::{ScanDisplacement, VelocityFusion, VelocityFusionConfig};
use crate::events::{Event, EventKind};
use crate::sim::{SensorFrame, SIM_DT};
use crate::wrap_angle;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimationConfig {
    pub icp: IcpConfig,
    pub height: HeightFilterConfig,
    pub velocity: VelocityFusionConfig,
    pub ekf: EkfConfig,
}

struct PreviousScan {
    scan: PlanarScan,
    timestamp: f64,
    yaw: f64,
}

struct Keyframe {
    scan: PlanarScan,
    /// Pose of the previous scan in the keyframe.
    last: (f64, f64, f64),
}

/// `b` expressed in the frame that `a` is expressed in.
fn compose(a: (f64, f64, f64), b: (f64, f64, f64)) -> (f64, f64, f64) {
    let (s, c) = a.2.sin_cos();
    (
        a.0 + c * b.0 - s * b.1,
        a.1 + s * b.0 + c * b.1,
        wrap_angle(a.2 + b.2),
    )
}

/// `b` relative to `a`, both given in a common frame.
fn between(a: (f64, f64, f64), b: (f64, f64, f64)) -> (f64, f64, f64) {
    let (s, c) = a.2.sin_cos();
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    (c * dx + s * dy, -s * dx + c * dy, wrap_angle(b.2 - a.2))
}

/// The full estimation chain for one vehicle: preprocessing, scan matching,
/// height filter, velocity fusion and the EKF cascade.
pub struct Estimator {
    config: EstimationConfig,
    height: HeightFilterState,
    fusion: VelocityFusion,
    ekf: EkfState,
    prev_scan: Option<PreviousScan>,
    keyframe: Option<Keyframe>,
    last_time: Option<f64>,
    attitude: Vector3<f64>,
    state: VehicleState,
    last_match: Option<ScanMatchResult>,
    latest_scan: Option<PlanarScan>,
    ceiling: Option<f64>,
    flags: Flags,
    events: Vec<Event>,
}

#[derive(Default)]
struct Flags {
    velocity_degraded: bool,
    localization_degraded: bool,
    unusable: bool,
}

impl Estimator {
    pub fn new(initial_position: Vector3<f64>, initial_yaw: f64, config: EstimationConfig) -> Self {
        Self {
            config,
            height: HeightFilterState::new(initial_position.z),
            fusion: VelocityFusion::new(),
            ekf: EkfState::new(initial_position, initial_yaw)
                .with_position_sigma(config.ekf.initial_position_sigma),
            prev_scan: None,
            keyframe: None,
            last_time: None,
            attitude: Vector3::new(0.0, 0.0, initial_yaw),
            state: VehicleState::at(initial_position, initial_yaw),
            last_match: None,
            latest_scan: None,
            ceiling: None,
            flags: Flags::default(),
            events: Vec::new(),
        }
    }

    pub fn state(&self) -> &VehicleState {
        &self.state
    }

    pub fn ekf(&self) -> &EkfState {
        &self.ekf
    }

    pub fn height_filter(&self) -> &HeightFilterState {
        &self.height
    }

    pub fn last_match(&self) -> Option<&ScanMatchResult> {
        self.last_match.as_ref()
    }

    /// Most recent tilt-compensated scan.
    pub fn latest_scan(&self) -> Option<&PlanarScan> {
        self.latest_scan.as_ref()
    }

    /// Most recent vertical distance to the ceiling.
    pub fn ceiling_distance(&self) -> Option<f64> {
        self.ceiling
    }

    pub fn drain_events(&mut self) -> Vec<Event> {
        std::mem::take(&mut self.events)
    }

    fn edge(
        &mut self,
        t: f64,
        now: bool,
        was: bool,
        on: (EventKind, &str),
        off: Option<(EventKind, &str)>,
    ) {
        if now && !was {
            self.events.push(Event::new(t, on.0, on.1));
        } else if !now && was {
            if let Some((kind, detail)) = off {
                self.events.push(Event::new(t, kind, detail));
            }
        }
    }

    /// Motion from the previous scan to `scan`, registered through the
    /// keyframe when there is one.
    fn register(
        icp: &IcpConfig,
        keyframe: &mut Option<Keyframe>,
        prev: &PlanarScan,
        scan: &PlanarScan,
        guess: (f64, f64, f64),
    ) -> ScanMatchResult {
        if icp.keyframe_distance > 0.0 {
            if let Some(key) = keyframe {
                let r = match_scans(&key.scan, scan, compose(key.last, guess), icp);
                if r.converged {
                    let (dx, dy, dpsi) = between(key.last, r.pose());
                    key.last = r.pose();
                    if r.dx.hypot(r.dy) > icp.keyframe_distance
                        || r.dpsi.abs() > icp.keyframe_rotation
                        || r.fitness < icp.keyframe_fitness
                    {
                        *keyframe = None;
                    }
                    return ScanMatchResult { dx, dy, dpsi, ..r };
                }
            }
        }
        *keyframe = None;
        match_scans(prev, scan, guess, icp)
    }

    pub fn step(&mut self, frame: &SensorFrame) -> &VehicleState {
        let t = frame.timestamp;
        let dt = match self.last_time {
            Some(prev) if t > prev => t - prev,
            _ => SIM_DT,
        };
        self.last_time = Some(t);
        if let Some(imu) = &frame.imu {
            self.attitude = imu.attitude;
        }
        let (roll, pitch, yaw) = (self.attitude.x, self.attitude.y, self.attitude.z);
        let c = preprocess(frame, roll, pitch);
        let was = self.flags.unusable;
        self.flags.unusable = !c.usable;
        self.edge(
            t,
            !c.usable,
            was,
            (
                EventKind::UnusableFrame,
                "attitude outside compensation envelope",
            ),
            None,
        );

        self.height = update_height(&self.height, c.baro, c.height, dt, &self.config.height);
        if c.ceiling.is_some() {
            self.ceiling = c.ceiling;
        }

        let (s, co) = yaw.sin_cos();
        let accel_world = c
            .accel
            .map(|a| Vector3::new(co * a.x - s * a.y, s * a.x + co * a.y, a.z))
            .unwrap_or_else(Vector3::zeros);

        let mut matched = None;
        if let Some(scan) = c.scan {
            if let Some(prev) = &self.prev_scan {
                let interval = t - prev.timestamp;
                let v = self.state.velocity;
                let (sp, cp) = prev.yaw.sin_cos();
                let disp = Vector2::new(cp * v.x + sp * v.y, -sp * v.x + cp * v.y) * interval;
                let guess = (disp.x, disp.y, wrap_angle(yaw - prev.yaw));
                let result = Self::register(
                    &self.config.icp,
                    &mut self.keyframe,
                    &prev.scan,
                    &scan,
                    guess,
                );
                matched = Some((result, prev.yaw, interval));
            }
            if self.keyframe.is_none() {
                self.keyframe = Some(Keyframe {
                    scan: scan.clone(),
                    last: (0.0, 0.0, 0.0),
                });
            }
            self.latest_scan = Some(scan.clone());
            self.prev_scan = Some(PreviousScan {
                scan,
                timestamp: t,
                yaw,
            });
        }
        let fused = {
            let disp = matched
                .as_ref()
                .map(|(r, yaw_prev, interval)| ScanDisplacement {
                    result: r,
                    yaw_prev: *yaw_prev,
                    interval: *interval,
                });
            self.fusion.fuse_velocity(
                disp,
                accel_world.xy(),
                &self.height,
                dt,
                &self.config.velocity,
            )
        };
        if let Some((r, _, _)) = matched {
            self.last_match = Some(r);
        }
        let was = self.flags.velocity_degraded;
        self.flags.velocity_degraded = fused.degraded;
        self.edge(
            t,
            fused.degraded,
            was,
            (
                EventKind::VelocityDegraded,
                "scan matcher not converged, IMU-only velocity",
            ),
            None,
        );

        let m = EkfMeasurements {
            velocity: Some(fused.velocity),
            yaw: frame.imu.map(|i| i.attitude.z),
            height: Some(self.height.height),
            fix: c.uwb,
        };
        self.ekf = ekf_step(&self.ekf, &m, dt, &self.config.ekf);
        if self.ekf.last_fix.forced {
            self.events.push(Event::new(
                t,
                EventKind::UwbForced,
                "absolute fix accepted after rejection streak",
            ));
        }
        let was = self.flags.localization_degraded;
        self.flags.localization_degraded = self.ekf.degraded;
        self.edge(
            t,
            self.ekf.degraded,
            was,
            (
                EventKind::DegradedLocalization,
                "global covariance above cap",
            ),
            Some((
                EventKind::LocalizationRecovered,
                "global covariance back under cap",
            )),
        );

        self.state = VehicleState {
            timestamp: t.max(self.state.timestamp),
            position: self.ekf.position(),
            roll: wrap_angle(roll),
            pitch: wrap_angle(pitch),
            yaw: wrap_angle(self.ekf.yaw()),
            velocity: self.ekf.velocity(),
            acceleration: accel_world,
            angular_rates: c.gyro.unwrap_or(self.state.angular_rates),
        };
        &self.state
    }
}
