use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use hullsight_core::bridge::{Command, Session};
use hullsight_core::config::RunConfig;
use hullsight_core::estimation::{match_scans, IcpConfig, PlanarScan};
use hullsight_core::sim::{cast_laser_scan, load_world, LaserConfig, VehicleTruth, WorldModel};
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn lab() -> WorldModel {
    load_world(concat!(env!("CARGO_MANIFEST_DIR"), "/../../rooms/lab.json")).expect("lab world")
}

fn scan_at(world: &WorldModel, x: f64, y: f64, yaw: f64, seed: u64) -> PlanarScan {
    let truth = VehicleTruth::hovering(Vector3::new(x, y, 1.0), yaw);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PlanarScan::project(
        &cast_laser_scan(&truth, world, &LaserConfig::default(), 0.01, &mut rng),
        0.0,
        0.0,
    )
}

fn ray_cast(c: &mut Criterion) {
    let world = lab();
    let truth = VehicleTruth::hovering(Vector3::new(0.5, -0.3, 1.2), 0.4);
    let config = LaserConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    c.bench_function("laser_scan_lab", |b| {
        b.iter(|| cast_laser_scan(black_box(&truth), &world, &config, 0.01, &mut rng))
    });
}

fn scan_matching(c: &mut Criterion) {
    let world = lab();
    let prev = scan_at(&world, 0.0, 0.0, 0.0, 1);
    let curr = scan_at(&world, 0.05, -0.02, 0.01, 2);
    let config = IcpConfig::default();
    c.bench_function("icp_consecutive", |b| {
        b.iter(|| match_scans(black_box(&prev), black_box(&curr), (0.0, 0.0, 0.0), &config))
    });
}

fn control_loop(c: &mut Criterion) {
    let mut session = Session::new(lab(), 3, RunConfig::default(), false);
    session.apply(&Command::Takeoff).expect("takeoff accepted");
    while session.time() < 5.0 {
        session.step();
    }
    c.bench_function("session_tick", |b| {
        b.iter(|| {
            session.step();
            black_box(session.drain_events())
        })
    });
}

criterion_group!(benches, ray_cast, scan_matching, control_loop);
criterion_main!(benches);
