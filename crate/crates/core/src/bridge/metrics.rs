//! Metric extraction from run logs: hover error PDFs, collision-avoidance
//! profiles, go-home final distances and waypoint-mission achievement.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::run::{EVENTS_FILE, MANIFEST_FILE};
use super::session::LogRow;
use super::Manifest;
use crate::control::FlightPhase;
use crate::error::MetricsError;
use crate::events::{Event, EventKind};
use crate::sim::WorldModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Hover,
    Collision,
    Gohome,
    Sweep,
}

impl std::str::FromStr for MetricKind {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hover" => Ok(Self::Hover),
            "collision" => Ok(Self::Collision),
            "gohome" | "go_home" => Ok(Self::Gohome),
            "sweep" | "vertical" => Ok(Self::Sweep),
            other => Err(MetricsError::Malformed(format!(
                "unknown metric kind {other:?}"
            ))),
        }
    }
}

/// A run as seen by the metrics: the per-tick log, its event journal and,
/// when a manifest sits next to the log, the world it ran in.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub rows: Vec<LogRow>,
    pub events: Vec<Event>,
    pub world: Option<WorldModel>,
}

impl RunRecord {
    pub fn new(rows: Vec<LogRow>, events: Vec<Event>) -> Self {
        Self {
            rows,
            events,
            world: None,
        }
    }

    /// Read `log.csv` plus the sibling `events.jsonl` and `manifest.json`
    /// when present.
    pub fn load(log: impl AsRef<Path>) -> Result<Self, MetricsError> {
        let log = log.as_ref();
        let mut reader = csv::Reader::from_path(log).map_err(csv_error)?;
        let rows = reader
            .deserialize::<LogRow>()
            .collect::<Result<Vec<_>, _>>()
            .map_err(csv_error)?;
        let dir = log.parent().unwrap_or_else(|| Path::new("."));
        let events = match std::fs::read_to_string(dir.join(EVENTS_FILE)) {
            Ok(text) => text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| {
                    serde_json::from_str(l)
                        .map_err(|e| MetricsError::Malformed(format!("{EVENTS_FILE}: {e}")))
                })
                .collect::<Result<Vec<Event>, _>>()?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let world = match std::fs::read_to_string(dir.join(MANIFEST_FILE)) {
            Ok(text) => {
                let manifest: Manifest = serde_json::from_str(&text)
                    .map_err(|e| MetricsError::Malformed(format!("{MANIFEST_FILE}: {e}")))?;
                Some(
                    WorldModel::from_json(&manifest.world)
                        .map_err(|e| MetricsError::Malformed(format!("embedded world: {e}")))?,
                )
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(e.into()),
        };
        Ok(Self {
            rows,
            events,
            world,
        })
    }

    fn truth_at(&self, t: f64) -> Option<Vector3<f64>> {
        let i = self.rows.partition_point(|r| r.t < t - 1e-9);
        self.rows.get(i).map(truth)
    }
}

fn csv_error(e: csv::Error) -> MetricsError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => MetricsError::Io(io),
        other => MetricsError::Malformed(format!("{other:?}")),
    }
}

fn truth(r: &LogRow) -> Vector3<f64> {
    Vector3::new(r.x_true, r.y_true, r.z_true)
}

/// Body-frame command rotated into the world by the true heading.
fn world_command(r: &LogRow) -> Vector2<f64> {
    let (s, c) = r.psi_true.sin_cos();
    Vector2::new(c * r.cmd_vx - s * r.cmd_vy, s * r.cmd_vx + c * r.cmd_vy)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub center: f64,
    pub density: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisError {
    pub axis: String,
    pub mean: f64,
    pub std: f64,
    pub within: f64,
    pub histogram: Vec<HistogramBin>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoverReport {
    pub window: [f64; 2],
    pub capture: [f64; 3],
    pub samples: usize,
    pub band: f64,
    pub axes: Vec<AxisError>,
}

pub const HOVER_BAND: f64 = 0.05;
const HOVER_BIN: f64 = 0.01;
const HOVER_RANGE: f64 = 0.1;

/// Keep-position windows as `(start, end, capture)`. A window opens at a
/// keep-position event and closes at the next event that changes what the
/// vehicle is doing, or when a user command starts.
pub fn keep_windows(record: &RunRecord) -> Vec<(f64, f64, Vector3<f64>)> {
    let ends = |k: EventKind| {
        matches!(
            k,
            EventKind::KeepPositionEngaged
                | EventKind::MissionStarted
                | EventKind::ScriptAction
                | EventKind::PhaseChange
                | EventKind::LandNowAbort
        )
    };
    let last_t = record.rows.last().map_or(0.0, |r| r.t);
    let mut out = Vec::new();
    for (i, e) in record.events.iter().enumerate() {
        if e.kind != EventKind::KeepPositionEngaged {
            continue;
        }
        let Some(p) = e.position else { continue };
        let event_end = record.events[i + 1..]
            .iter()
            .find(|n| n.t > e.t && ends(n.kind))
            .map_or(last_t + 1.0, |n| n.t);
        let user_end = record
            .rows
            .iter()
            .find(|r| r.t > e.t && (r.user_vx != 0.0 || r.user_vy != 0.0 || r.user_vz != 0.0))
            .map_or(f64::INFINITY, |r| r.t);
        out.push((e.t, event_end.min(user_end), Vector3::from(p)));
    }
    out
}

/// Position error of the true pose against the keep-position capture point
/// over the longest keep window.
pub fn hover_report(record: &RunRecord) -> Result<HoverReport, MetricsError> {
    let (t0, t1, capture) = keep_windows(record)
        .into_iter()
        .max_by(|a, b| (a.1 - a.0).total_cmp(&(b.1 - b.0)))
        .ok_or_else(|| MetricsError::ScenarioNotFound("no keep-position window".into()))?;
    let errors: Vec<Vector3<f64>> = record
        .rows
        .iter()
        .filter(|r| r.t >= t0 && r.t < t1 && r.phase == FlightPhase::Flying)
        .map(|r| truth(r) - capture)
        .collect();
    if errors.is_empty() {
        return Err(MetricsError::ScenarioNotFound(
            "keep-position window has no airborne samples".into(),
        ));
    }
    let n = errors.len() as f64;
    let bins = (2.0 * HOVER_RANGE / HOVER_BIN).round() as usize;
    let axes = ["x", "y", "z"]
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let v: Vec<f64> = errors.iter().map(|e| e[k]).collect();
            let mean = v.iter().sum::<f64>() / n;
            let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            let within = v.iter().filter(|x| x.abs() <= HOVER_BAND).count() as f64 / n;
            let mut counts = vec![0usize; bins];
            for x in &v {
                let b = ((x + HOVER_RANGE) / HOVER_BIN).floor();
                if b >= 0.0 && (b as usize) < bins {
                    counts[b as usize] += 1;
                }
            }
            let histogram = counts
                .iter()
                .enumerate()
                .map(|(i, c)| HistogramBin {
                    center: ((-HOVER_RANGE + (i as f64 + 0.5) * HOVER_BIN) * 1e6).round() / 1e6,
                    density: *c as f64 / (n * HOVER_BIN),
                })
                .collect();
            AxisError {
                axis: name.to_string(),
                mean,
                std,
                within,
                histogram,
            }
        })
        .collect();
    Ok(HoverReport {
        window: [t0, t1],
        capture: [capture.x, capture.y, capture.z],
        samples: errors.len(),
        band: HOVER_BAND,
        axes,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionSample {
    pub t: f64,
    pub d: f64,
    pub user: f64,
    /// Fused command projected on the user command direction.
    pub fused: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instant {
    pub t: f64,
    pub d: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceBin {
    pub lo: f64,
    pub hi: f64,
    pub samples: usize,
    pub mean_fused: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionReport {
    pub samples: Vec<CollisionSample>,
    /// Fused command first drops below 98% of the user command.
    pub a: Option<Instant>,
    /// Fused command first reaches zero.
    pub b: Option<Instant>,
    /// Fused command first points away from the obstacle.
    pub c: Option<Instant>,
    pub bins: Vec<DistanceBin>,
    pub min_true_distance: f64,
}

const COLLISION_BIN: f64 = 0.1;

/// User-versus-fused command profile while a horizontal user command is held.
pub fn collision_report(record: &RunRecord) -> Result<CollisionReport, MetricsError> {
    let samples: Vec<CollisionSample> = record
        .rows
        .iter()
        .filter_map(|r| {
            let u = Vector2::new(r.user_vx, r.user_vy);
            let speed = u.norm();
            (speed > 1e-6).then(|| CollisionSample {
                t: r.t,
                d: r.min_obstacle_d,
                user: speed,
                fused: Vector2::new(r.cmd_vx, r.cmd_vy).dot(&u) / speed,
            })
        })
        .collect();
    if samples.is_empty() {
        return Err(MetricsError::ScenarioNotFound(
            "no horizontal user command in log".into(),
        ));
    }
    let instant = |f: &dyn Fn(&CollisionSample) -> bool| {
        samples
            .iter()
            .find(|s| f(s))
            .map(|s| Instant { t: s.t, d: s.d })
    };
    let a = instant(&|s| s.fused < 0.98 * s.user);
    let b = instant(&|s| s.fused <= 0.0);
    let c = instant(&|s| s.fused < 0.0);
    let top = samples.iter().map(|s| s.d).fold(0.0, f64::max);
    let mut bins = Vec::new();
    let mut k = 0;
    loop {
        let lo = k as f64 * COLLISION_BIN;
        if lo > top {
            break;
        }
        let hi = lo + COLLISION_BIN;
        let inside: Vec<f64> = samples
            .iter()
            .filter(|s| s.d >= lo && s.d < hi)
            .map(|s| s.fused)
            .collect();
        if !inside.is_empty() {
            bins.push(DistanceBin {
                lo,
                hi,
                samples: inside.len(),
                mean_fused: inside.iter().sum::<f64>() / inside.len() as f64,
            });
        }
        k += 1;
    }
    let min_true_distance = record
        .rows
        .iter()
        .filter(|r| r.phase.is_airborne())
        .map(|r| r.min_obstacle_d)
        .fold(f64::INFINITY, f64::min);
    Ok(CollisionReport {
        samples,
        a,
        b,
        c,
        bins,
        min_true_distance,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoHomeRun {
    pub run: String,
    pub home: [f64; 3],
    pub start: [f64; 3],
    pub final_position: [f64; 3],
    pub distance: f64,
    pub completed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoHomeReport {
    pub runs: Vec<GoHomeRun>,
}

#[derive(Deserialize)]
struct StartedDetail {
    kind: String,
    waypoints: Vec<[f64; 3]>,
    #[serde(default)]
    clipped: bool,
}

fn started_missions(record: &RunRecord) -> impl Iterator<Item = (usize, &Event, StartedDetail)> {
    record.events.iter().enumerate().filter_map(|(i, e)| {
        if e.kind != EventKind::MissionStarted {
            return None;
        }
        serde_json::from_str::<StartedDetail>(&e.detail)
            .ok()
            .map(|d| (i, e, d))
    })
}

/// True position at the end of the last airborne stretch after a go-home
/// mission started, against the home it flew to.
pub fn go_home_run(name: &str, record: &RunRecord) -> Result<GoHomeRun, MetricsError> {
    let (i, started, detail) = started_missions(record)
        .filter(|(_, _, d)| d.kind == "go_home")
        .last()
        .ok_or_else(|| MetricsError::ScenarioNotFound("no go-home mission".into()))?;
    let home = *detail
        .waypoints
        .last()
        .ok_or_else(|| MetricsError::ScenarioNotFound("go-home mission started at home".into()))?;
    let completed = record.events[i..]
        .iter()
        .any(|e| e.kind == EventKind::MissionComplete && e.detail == "go_home");
    let start = record
        .truth_at(started.t)
        .ok_or_else(|| MetricsError::Malformed("log ends before the go-home mission".into()))?;
    let last = record
        .rows
        .iter()
        .rfind(|r| r.t >= started.t && r.phase == FlightPhase::Flying)
        .ok_or_else(|| {
            MetricsError::ScenarioNotFound("no airborne samples after go-home".into())
        })?;
    let fin = truth(last);
    Ok(GoHomeRun {
        run: name.to_string(),
        home,
        start: [start.x, start.y, start.z],
        final_position: [fin.x, fin.y, fin.z],
        distance: (fin - Vector3::from(home)).norm(),
        completed,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissionReport {
    pub kind: String,
    pub planned: Vec<[f64; 3]>,
    pub reached: usize,
    pub ratio: f64,
    pub in_order: bool,
    pub completed: bool,
    pub clipped: bool,
    pub started: f64,
    pub finished: Option<f64>,
    /// Sweeps: largest true distance from the plane through the first row,
    /// between the first waypoint and completion.
    pub plane_deviation: Option<f64>,
    /// Vertical inspections: true heights at the reached waypoints rise along
    /// the first column and fall along the second.
    pub columns_monotonic: Option<bool>,
    /// True path `(t, x, y, z)` from start to completion.
    pub path: Vec<[f64; 4]>,
}

/// Achievement report for the first sweep or vertical-inspection mission.
pub fn mission_report(record: &RunRecord) -> Result<MissionReport, MetricsError> {
    let (i, started, detail) = started_missions(record)
        .find(|(_, _, d)| d.kind == "sweep" || d.kind == "vertical")
        .ok_or_else(|| MetricsError::ScenarioNotFound("no sweep or vertical mission".into()))?;
    let n = detail.waypoints.len();
    let mut reached = Vec::new();
    let mut finished = None;
    for e in &record.events[i + 1..] {
        match e.kind {
            EventKind::WaypointReached if e.detail.starts_with(&detail.kind) => reached.push(e),
            EventKind::MissionComplete if e.detail == detail.kind => {
                finished = Some(e.t);
                break;
            }
            EventKind::MissionStarted | EventKind::MissionCancelled | EventKind::MissionStalled => {
                break
            }
            _ => {}
        }
    }
    let in_order = reached
        .iter()
        .enumerate()
        .all(|(k, e)| e.detail == format!("{} {}/{}", detail.kind, k + 1, n));
    let end = finished.unwrap_or_else(|| record.rows.last().map_or(started.t, |r| r.t));
    let path: Vec<[f64; 4]> = record
        .rows
        .iter()
        .filter(|r| r.t >= started.t && r.t <= end)
        .map(|r| [r.t, r.x_true, r.y_true, r.z_true])
        .collect();

    let plane_deviation = (detail.kind == "sweep" && n >= 2).then(|| {
        let a = Vector2::new(detail.waypoints[0][0], detail.waypoints[0][1]);
        let b = Vector2::new(detail.waypoints[1][0], detail.waypoints[1][1]);
        let u = (b - a).normalize();
        let normal = Vector2::new(-u.y, u.x);
        let from = reached.first().map_or(f64::INFINITY, |e| e.t);
        path.iter()
            .filter(|p| p[0] >= from)
            .map(|p| (Vector2::new(p[1], p[2]) - a).dot(&normal).abs())
            .fold(0.0, f64::max)
    });
    let columns_monotonic = (detail.kind == "vertical").then(|| {
        let heights: Vec<f64> = reached
            .iter()
            .filter_map(|e| record.truth_at(e.t))
            .map(|p| p.z)
            .collect();
        let half = n / 2;
        let (up, down) = heights.split_at(half.min(heights.len()));
        up.windows(2).all(|w| w[1] > w[0]) && down.windows(2).all(|w| w[1] < w[0])
    });
    Ok(MissionReport {
        kind: detail.kind.clone(),
        planned: detail.waypoints.clone(),
        reached: reached.len(),
        ratio: if n == 0 {
            1.0
        } else {
            reached.len() as f64 / n as f64
        },
        in_order,
        completed: finished.is_some(),
        clipped: detail.clipped,
        started: started.t,
        finished,
        plane_deviation,
        columns_monotonic,
        path,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominanceViolation {
    pub t: f64,
    pub distance: f64,
    /// Command speed toward the obstacle point, m/s.
    pub approach: f64,
}

/// Ticks where the fused command, rotated by the true heading, has a positive
/// component toward a surface point closer than `d_min` to the true position.
/// Surfaces are sampled every 2 cm.
pub fn safety_dominance_violations(
    rows: &[LogRow],
    world: &WorldModel,
    d_min: f64,
) -> Vec<DominanceViolation> {
    const STEP: f64 = 0.02;
    const EPS: f64 = 1e-9;
    let mut out = Vec::new();
    for r in rows.iter().filter(|r| r.phase.is_airborne()) {
        let p = Vector2::new(r.x_true, r.y_true);
        let v = world_command(r);
        let mut worst: Option<DominanceViolation> = None;
        for seg in world.segments_at_height(r.z_true) {
            let (a, b) = (seg.a, seg.b);
            if (seg.closest_point(&p) - p).norm() >= d_min {
                continue;
            }
            let steps = ((b - a).norm() / STEP).ceil().max(1.0) as usize;
            for k in 0..=steps {
                let q = a + (b - a) * (k as f64 / steps as f64);
                let to = q - p;
                let d = to.norm();
                if d >= d_min || d < 1e-9 {
                    continue;
                }
                let approach = v.dot(&to) / d;
                if approach > EPS && worst.is_none_or(|w| approach > w.approach) {
                    worst = Some(DominanceViolation {
                        t: r.t,
                        distance: d,
                        approach,
                    });
                }
            }
        }
        out.extend(worst);
    }
    out
}

/// Any of the four reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Report {
    Hover(HoverReport),
    Collision(CollisionReport),
    Gohome(GoHomeReport),
    Sweep(MissionReport),
}

impl Report {
    /// Compute `kind` over one or more logs. Only go-home reports combine
    /// several runs; the others use the first log.
    pub fn from_logs(kind: MetricKind, logs: &[impl AsRef<Path>]) -> Result<Self, MetricsError> {
        let first = logs
            .first()
            .ok_or_else(|| MetricsError::Malformed("no log given".into()))?;
        Ok(match kind {
            MetricKind::Hover => Self::Hover(hover_report(&RunRecord::load(first)?)?),
            MetricKind::Collision => Self::Collision(collision_report(&RunRecord::load(first)?)?),
            MetricKind::Sweep => Self::Sweep(mission_report(&RunRecord::load(first)?)?),
            MetricKind::Gohome => {
                let runs = logs
                    .iter()
                    .map(|l| {
                        let l = l.as_ref();
                        go_home_run(&l.display().to_string(), &RunRecord::load(l)?)
                    })
                    .collect::<Result<_, MetricsError>>()?;
                Self::Gohome(GoHomeReport { runs })
            }
        })
    }

    /// Plot-ready table: hover error PDFs, the collision command series,
    /// go-home final distances, or the mission path.
    pub fn csv(&self) -> String {
        let mut s = String::new();
        match self {
            Self::Hover(h) => {
                s.push_str("axis,center,density\n");
                for a in &h.axes {
                    for b in &a.histogram {
                        let _ = writeln!(s, "{},{},{}", a.axis, b.center, b.density);
                    }
                }
            }
            Self::Collision(c) => {
                s.push_str("t,d,user,fused\n");
                for x in &c.samples {
                    let _ = writeln!(s, "{},{},{},{}", x.t, x.d, x.user, x.fused);
                }
            }
            Self::Gohome(g) => {
                s.push_str("run,home_x,home_y,home_z,final_x,final_y,final_z,distance,completed\n");
                for r in &g.runs {
                    let _ = writeln!(
                        s,
                        "{},{},{},{},{},{},{},{},{}",
                        r.run,
                        r.home[0],
                        r.home[1],
                        r.home[2],
                        r.final_position[0],
                        r.final_position[1],
                        r.final_position[2],
                        r.distance,
                        r.completed
                    );
                }
            }
            Self::Sweep(m) => {
                s.push_str("t,x,y,z\n");
                for p in &m.path {
                    let _ = writeln!(s, "{},{},{},{}", p[0], p[1], p[2], p[3]);
                }
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(t: f64, p: [f64; 3]) -> LogRow {
        LogRow {
            t,
            phase: FlightPhase::Flying,
            x: p[0],
            y: p[1],
            z: p[2],
            psi: 0.0,
            vx: 0.0,
            vy: 0.0,
            vz: 0.0,
            x_true: p[0],
            y_true: p[1],
            z_true: p[2],
            psi_true: 0.0,
            cmd_vx: 0.0,
            cmd_vy: 0.0,
            cmd_vz: 0.0,
            cmd_yawrate: 0.0,
            user_vx: 0.0,
            user_vy: 0.0,
            user_vz: 0.0,
            min_obstacle_d: 5.0,
            battery: 1.0,
            active_behaviors: String::new(),
        }
    }

    fn keep_at(t: f64, p: [f64; 3]) -> Event {
        Event {
            t,
            kind: EventKind::KeepPositionEngaged,
            detail: "operator request".into(),
            position: Some(p),
        }
    }

    #[test]
    fn perfect_hover_is_centred_and_inside_band() {
        let p = [1.0, 2.0, 1.5];
        let rows = (0..3000).map(|k| row(k as f64 * 0.02, p)).collect();
        let r = hover_report(&RunRecord::new(rows, vec![keep_at(0.0, p)])).unwrap();
        assert_eq!(r.samples, 3000);
        for a in &r.axes {
            assert_eq!(a.mean, 0.0);
            assert_eq!(a.within, 1.0);
            let mass: f64 = a.histogram.iter().map(|b| b.density * HOVER_BIN).sum();
            assert!((mass - 1.0).abs() < 1e-9);
            let peak = a
                .histogram
                .iter()
                .max_by(|x, y| x.density.total_cmp(&y.density))
                .unwrap();
            assert!(peak.center.abs() <= HOVER_BIN);
        }
    }

    #[test]
    fn hover_offsets_are_counted_against_the_band() {
        let p = [0.0, 0.0, 1.0];
        let rows = (0..100)
            .map(|k| {
                let dx = if k < 80 { 0.02 } else { 0.08 };
                row(k as f64 * 0.02, [dx, 0.0, 1.0])
            })
            .collect();
        let r = hover_report(&RunRecord::new(rows, vec![keep_at(0.0, p)])).unwrap();
        assert!((r.axes[0].within - 0.8).abs() < 1e-12);
        assert!((r.axes[0].mean - (0.8 * 0.02 + 0.2 * 0.08)).abs() < 1e-12);
    }

    #[test]
    fn longest_keep_window_wins_and_ends_at_next_action() {
        let mut rows: Vec<LogRow> = (0..500)
            .map(|k| row(k as f64 * 0.02, [0.0, 0.0, 1.0]))
            .collect();
        for r in rows.iter_mut().filter(|r| r.t >= 8.0) {
            r.x_true = 3.0;
        }
        let events = vec![
            keep_at(0.0, [0.0, 0.0, 1.0]),
            keep_at(2.0, [0.0, 0.0, 1.0]),
            Event::new(8.0, EventKind::ScriptAction, "{}"),
        ];
        let r = hover_report(&RunRecord::new(rows, events)).unwrap();
        assert_eq!(r.window, [2.0, 8.0]);
        assert_eq!(r.axes[0].within, 1.0);
    }

    #[test]
    fn hover_without_keep_is_not_found() {
        let rows = vec![row(0.0, [0.0; 3])];
        assert!(matches!(
            hover_report(&RunRecord::new(rows, vec![])),
            Err(MetricsError::ScenarioNotFound(_))
        ));
    }

    /// Synthetic approach with the piecewise-linear attenuation profile.
    #[test]
    fn collision_instants_follow_the_profile() {
        let rows = (0..400)
            .map(|k| {
                let d = 4.0 - k as f64 * 0.01;
                let mut r = row(k as f64 * 0.02, [0.0, 0.0, 1.0]);
                r.min_obstacle_d = d;
                r.user_vx = 1.0;
                r.cmd_vx = ((d - 1.3) / 1.2).clamp(-0.2, 1.0);
                r
            })
            .collect();
        let c = collision_report(&RunRecord::new(rows, vec![])).unwrap();
        let a = c.a.unwrap();
        let b = c.b.unwrap();
        let cc = c.c.unwrap();
        assert!((a.d - 2.47).abs() < 0.02, "{a:?}");
        assert!((b.d - 1.3).abs() < 0.011, "{b:?}");
        assert!(cc.d < 1.3 && cc.d > 1.28, "{cc:?}");
        let inner: Vec<f64> = c
            .bins
            .iter()
            .filter(|b| b.lo >= 1.35 && b.hi <= 2.45)
            .map(|b| b.mean_fused)
            .collect();
        assert!(inner.windows(2).all(|w| w[1] > w[0]));
        assert!((c.min_true_distance - 0.01).abs() < 1e-9);
    }

    #[test]
    fn go_home_distance_uses_last_airborne_truth() {
        let mut rows: Vec<LogRow> = (0..100)
            .map(|k| row(k as f64 * 0.1, [0.1, 0.0, 1.5]))
            .collect();
        rows[99].phase = FlightPhase::Landing;
        rows[99].x_true = 5.0;
        let events = vec![
            Event::new(
                1.0,
                EventKind::MissionStarted,
                r#"{"kind":"go_home","waypoints":[[0.0,0.0,1.5]],"clipped":false}"#,
            ),
            Event::new(5.0, EventKind::MissionComplete, "go_home"),
        ];
        let r = go_home_run("a", &RunRecord::new(rows, events)).unwrap();
        assert!(r.completed);
        assert!((r.distance - 0.1).abs() < 1e-12);
    }

    #[test]
    fn mission_report_counts_reached_waypoints_in_order() {
        let rows: Vec<LogRow> = (0..100)
            .map(|k| {
                row(
                    k as f64 * 0.1,
                    [2.0, k as f64 * 0.01, 1.0 + k as f64 * 0.01],
                )
            })
            .collect();
        let events = vec![
            Event::new(
                1.0,
                EventKind::MissionStarted,
                r#"{"kind":"vertical","waypoints":[[2,-1,1],[2,-1,2],[2,1,2],[2,1,1]],"clipped":true}"#,
            ),
            Event::new(2.0, EventKind::WaypointReached, "vertical 1/4"),
            Event::new(3.0, EventKind::WaypointReached, "vertical 2/4"),
            Event::new(4.0, EventKind::WaypointReached, "vertical 3/4"),
        ];
        let m = mission_report(&RunRecord::new(rows, events)).unwrap();
        assert_eq!(m.reached, 3);
        assert!(m.in_order && !m.completed && m.clipped);
        assert!((m.ratio - 0.75).abs() < 1e-12);
        // Heights at 2 s and 3 s rise; the descending column has one sample.
        assert_eq!(m.columns_monotonic, Some(true));
        assert_eq!(m.plane_deviation, None);
    }

    #[test]
    fn dominance_flags_only_approach_inside_radius() {
        let world = WorldModel::from_json(
            r#"{"walls":[{"points":[[-5,-5],[2,-5],[2,5],[-5,5],[-5,-5]],"height":4}],"boxes":[],"ceiling_height":4}"#,
        )
        .unwrap();
        let mut near = row(0.0, [1.0, 0.0, 1.0]);
        near.cmd_vx = 0.1;
        let mut away = row(0.1, [1.0, 0.0, 1.0]);
        away.cmd_vx = -0.1;
        let mut far = row(0.2, [0.0, 0.0, 1.0]);
        far.cmd_vx = 1.0;
        let v = safety_dominance_violations(&[near, away, far], &world, 1.3);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].t, 0.0);
        assert!((v[0].approach - 0.1).abs() < 1e-9);
    }
}
