//! Deterministic simulation of the vehicle, its environment and its sensors.

mod dynamics;
mod laser;
mod sensors;
mod world;

pub use dynamics::{
    step_dynamics, DynamicsParams, InnerLoopSetpoint, SetpointLimits, VehicleTruth, GRAVITY,
};
pub use laser::{cast_laser_scan, LaserConfig, LaserScan};
pub use sensors::{ImuSample, SensorFrame, SensorRates, SensorSuite};
pub use world::{
    load_world, BatterySpec, BoxObstacle, NoiseSpec, Segment, SensorNoise, Spawn, Wall, WindSpec,
    WorldModel,
};

/// Fixed simulation tick.
pub const SIM_DT: f64 = 0.01;
pub const SIM_RATE_HZ: u32 = 100;

/// Truth state, world and sensors advanced together in fixed ticks.
pub struct Simulator {
    world: WorldModel,
    truth: VehicleTruth,
    sensors: SensorSuite,
    params: DynamicsParams,
    tick: u64,
}

impl Simulator {
    pub fn new(world: WorldModel, seed: u64) -> Self {
        let spawn = world.spawn;
        let params = DynamicsParams {
            hover_endurance_s: world.battery.hover_endurance_s,
            ..DynamicsParams::default()
        };
        let sensors = SensorSuite::new(
            seed,
            &world,
            SensorRates::default(),
            SIM_RATE_HZ,
            LaserConfig::default(),
        );
        Self {
            truth: VehicleTruth::at_rest(spawn.x, spawn.y, spawn.yaw),
            world,
            sensors,
            params,
            tick: 0,
        }
    }

    pub fn world(&self) -> &WorldModel {
        &self.world
    }

    pub fn truth(&self) -> &VehicleTruth {
        &self.truth
    }

    pub fn set_truth(&mut self, truth: VehicleTruth) {
        self.truth = truth;
    }

    pub fn params(&self) -> &DynamicsParams {
        &self.params
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * SIM_DT
    }

    /// Sample the sensors due at the current tick.
    pub fn sense(&mut self) -> SensorFrame {
        self.sensors.sample(&self.truth, &self.world, self.tick)
    }

    /// Advance one tick. With motors off the vehicle stays put.
    pub fn advance(&mut self, setpoint: &InnerLoopSetpoint, motors_on: bool) {
        if motors_on {
            let wind = self.world.wind.velocity_at(self.time());
            self.truth = step_dynamics(&self.truth, setpoint, wind, SIM_DT, &self.params);
        } else {
            self.truth.velocity = nalgebra::Vector3::zeros();
            self.truth.body_accel = nalgebra::Vector3::zeros();
            self.truth.attitude_rates = nalgebra::Vector3::zeros();
            self.truth.yaw_rate = 0.0;
            self.truth.roll = 0.0;
            self.truth.pitch = 0.0;
        }
        self.tick += 1;
    }
}
