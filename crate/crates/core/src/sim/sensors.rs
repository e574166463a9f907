//! Seeded sensor emulation: laser, range finders, IMU, barometer and UWB.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dynamics::{VehicleTruth, GRAVITY};
use super::laser::{cast_laser_scan, LaserConfig, LaserScan};
use super::world::{NoiseSpec, WorldModel};

/// Sensor rates in Hz. Each must divide the simulation tick rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorRates {
    pub laser: u32,
    pub imu: u32,
    pub ranges: u32,
    pub baro: u32,
    pub uwb: u32,
}

impl Default for SensorRates {
    fn default() -> Self {
        Self {
            laser: 10,
            imu: 100,
            ranges: 20,
            baro: 20,
            uwb: 5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSample {
    /// Body-frame acceleration including the gravity vector (reads (0, 0, -g) at rest).
    pub accel: Vector3<f64>,
    /// Euler angle rates (roll, pitch, yaw).
    pub gyro: Vector3<f64>,
    /// Attitude reported by the flight-management unit: roll, pitch, yaw.
    pub attitude: Vector3<f64>,
}

/// Everything sampled in one simulation tick. Sensors not due are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorFrame {
    pub timestamp: f64,
    pub laser: Option<LaserScan>,
    pub range_down: Option<f64>,
    pub range_up: Option<f64>,
    pub imu: Option<ImuSample>,
    pub baro: Option<f64>,
    pub uwb: Option<Vector3<f64>>,
}

const RANGE_MIN: f64 = 0.01;
const RANGE_MAX: f64 = 40.0;

pub struct SensorSuite {
    rng: ChaCha8Rng,
    rates: SensorRates,
    tick_rate: u32,
    laser: LaserConfig,
    baro_bias: f64,
    accel_bias: Vector3<f64>,
    last_timestamp: Option<f64>,
}

impl SensorSuite {
    pub fn new(
        seed: u64,
        world: &WorldModel,
        rates: SensorRates,
        tick_rate: u32,
        laser: LaserConfig,
    ) -> Self {
        Self {
            // Sensor noise gets its own stream so that other consumers of the
            // seed do not perturb it.
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5e45_0e5e),
            rates,
            tick_rate,
            laser,
            baro_bias: world.sensor_noise.baro.bias,
            accel_bias: Vector3::repeat(world.sensor_noise.accel.bias),
            last_timestamp: None,
        }
    }

    pub fn laser_config(&self) -> &LaserConfig {
        &self.laser
    }

    pub fn baro_bias(&self) -> f64 {
        self.baro_bias
    }

    fn due(&self, tick: u64, rate: u32) -> bool {
        rate > 0 && tick.is_multiple_of(u64::from((self.tick_rate / rate).max(1)))
    }

    fn gauss(&mut self, sigma: f64) -> f64 {
        if sigma > 0.0 {
            let n: f64 = StandardNormal.sample(&mut self.rng);
            sigma * n
        } else {
            0.0
        }
    }

    fn walk(&mut self, bias: f64, spec: &NoiseSpec, rate: u32) -> f64 {
        bias + self.gauss(spec.bias_walk_sigma * (1.0 / f64::from(rate)).sqrt())
    }

    /// Sample every sensor that is due at simulation tick `tick`.
    pub fn sample(&mut self, truth: &VehicleTruth, world: &WorldModel, tick: u64) -> SensorFrame {
        let t = tick as f64 / f64::from(self.tick_rate);
        if let Some(last) = self.last_timestamp {
            debug_assert!(t > last, "sensor timestamps must increase");
        }
        self.last_timestamp = Some(t);
        let noise = &world.sensor_noise;
        let tilt = truth.roll.cos() * truth.pitch.cos();
        let p = truth.position;

        let laser = if self.due(tick, self.rates.laser) {
            let cfg = self.laser;
            Some(cast_laser_scan(
                truth,
                world,
                &cfg,
                noise.laser.sigma,
                &mut self.rng,
            ))
        } else {
            None
        };

        let (range_down, range_up) = if self.due(tick, self.rates.ranges) {
            let down = (p.z - world.floor_below(p.x, p.y, p.z)) / tilt
                + self.gauss(noise.range_down.sigma);
            let up = (world.ceiling_above(p.x, p.y, p.z) - p.z) / tilt
                + self.gauss(noise.range_up.sigma);
            let clip = |r: f64| (r <= RANGE_MAX).then_some(r.max(RANGE_MIN));
            (clip(down), clip(up))
        } else {
            (None, None)
        };

        let imu = if self.due(tick, self.rates.imu) {
            if noise.accel.bias_walk_sigma > 0.0 {
                for i in 0..3 {
                    self.accel_bias[i] =
                        self.walk(self.accel_bias[i], &noise.accel, self.rates.imu);
                }
            }
            let gravity_body = truth.rotation().inverse() * Vector3::new(0.0, 0.0, -GRAVITY);
            let accel = truth.body_accel
                + gravity_body
                + self.accel_bias
                + Vector3::new(
                    self.gauss(noise.accel.sigma),
                    self.gauss(noise.accel.sigma),
                    self.gauss(noise.accel.sigma),
                );
            let gyro = truth.attitude_rates
                + Vector3::new(
                    self.gauss(noise.gyro.sigma),
                    self.gauss(noise.gyro.sigma),
                    self.gauss(noise.gyro.sigma),
                );
            let attitude = Vector3::new(
                truth.roll + self.gauss(noise.attitude.sigma),
                truth.pitch + self.gauss(noise.attitude.sigma),
                crate::wrap_angle(
                    truth.yaw + noise.attitude.bias + self.gauss(noise.attitude.sigma),
                ),
            );
            Some(ImuSample {
                accel,
                gyro,
                attitude,
            })
        } else {
            None
        };

        let baro = if self.due(tick, self.rates.baro) {
            self.baro_bias = self.walk(self.baro_bias, &noise.baro, self.rates.baro);
            Some(p.z + self.baro_bias + self.gauss(noise.baro.sigma))
        } else {
            None
        };

        let uwb = if self.due(tick, self.rates.uwb) {
            let s = noise.uwb.sigma;
            Some(p + Vector3::new(self.gauss(s), self.gauss(s), self.gauss(s)))
        } else {
            None
        };

        SensorFrame {
            timestamp: t,
            laser,
            range_down,
            range_up,
            imu,
            baro,
            uwb,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world(noise: &str) -> WorldModel {
        WorldModel::from_json(&format!(
            r#"{{"walls":[{{"points":[[-5,-5],[5,-5],[5,5],[-5,5],[-5,-5]],"height":10}}],"ceiling_height":10,"sensor_noise":{noise}}}"#
        ))
        .unwrap()
    }

    fn noiseless() -> WorldModel {
        let mut w = world("{}");
        w.sensor_noise = crate::sim::SensorNoise::noiseless();
        w
    }

    fn suite(w: &WorldModel, seed: u64) -> SensorSuite {
        SensorSuite::new(seed, w, SensorRates::default(), 100, LaserConfig::default())
    }

    #[test]
    fn level_hover_ranges() {
        let w = noiseless();
        let truth = VehicleTruth::hovering(Vector3::new(0.0, 0.0, 2.0), 0.0);
        let f = suite(&w, 1).sample(&truth, &w, 0);
        assert!((f.range_down.unwrap() - 2.0).abs() < 1e-12);
        assert!((f.range_up.unwrap() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn rolled_downward_range_is_slant() {
        let w = noiseless();
        let mut truth = VehicleTruth::hovering(Vector3::new(0.0, 0.0, 2.0), 0.0);
        truth.roll = 0.2;
        let f = suite(&w, 1).sample(&truth, &w, 0);
        assert!((f.range_down.unwrap() - 2.0 / 0.2f64.cos()).abs() < 1e-12);
        assert!((f.range_down.unwrap() - 2.0407).abs() < 1e-4);
    }

    #[test]
    fn stationary_imu_reads_minus_g() {
        let w = noiseless();
        let truth = VehicleTruth::hovering(Vector3::new(0.0, 0.0, 2.0), 0.7);
        let imu = suite(&w, 1).sample(&truth, &w, 0).imu.unwrap();
        assert!((imu.accel - Vector3::new(0.0, 0.0, -GRAVITY)).norm() < 1e-12);
    }

    #[test]
    fn only_due_sensors_are_populated() {
        let w = noiseless();
        let truth = VehicleTruth::hovering(Vector3::new(0.0, 0.0, 2.0), 0.0);
        let mut s = suite(&w, 1);
        let frames: Vec<_> = (0..100).map(|k| s.sample(&truth, &w, k)).collect();
        assert_eq!(frames.iter().filter(|f| f.laser.is_some()).count(), 10);
        assert_eq!(frames.iter().filter(|f| f.imu.is_some()).count(), 100);
        assert_eq!(frames.iter().filter(|f| f.baro.is_some()).count(), 20);
        assert_eq!(frames.iter().filter(|f| f.uwb.is_some()).count(), 5);
        assert!(frames.windows(2).all(|w| w[1].timestamp > w[0].timestamp));
    }

    #[test]
    fn identical_seeds_give_identical_streams() {
        let w = world("{}");
        let truth = VehicleTruth::hovering(Vector3::new(0.3, -0.2, 1.2), 0.1);
        let mut a = suite(&w, 9);
        let mut b = suite(&w, 9);
        for k in 0..50 {
            assert_eq!(a.sample(&truth, &w, k), b.sample(&truth, &w, k));
        }
    }

    /// Random-walk oracle: after T seconds the bias deviation has standard
    /// deviation sigma_walk * sqrt(T). Check the empirical spread over seeds.
    #[test]
    fn baro_bias_walk_matches_random_walk_variance() {
        let w = world(r#"{"baro":{"sigma":0.0,"bias_walk_sigma":0.01,"bias":0.0}}"#);
        let truth = VehicleTruth::hovering(Vector3::new(0.0, 0.0, 2.0), 0.0);
        let seeds = 200;
        let mut sq = 0.0;
        for seed in 0..seeds {
            let mut s = SensorSuite::new(
                seed,
                &w,
                SensorRates {
                    laser: 0,
                    ..SensorRates::default()
                },
                100,
                LaserConfig::default(),
            );
            for k in 0..6000 {
                s.sample(&truth, &w, k);
            }
            sq += s.baro_bias().powi(2);
        }
        let empirical = (sq / seeds as f64).sqrt();
        let expected = 0.01 * 60f64.sqrt();
        // 200 samples: relative standard error of the rms is about 5%.
        assert!(
            (empirical / expected - 1.0).abs() < 0.2,
            "{empirical} vs {expected}"
        );
    }
}
