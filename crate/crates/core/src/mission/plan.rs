//! Waypoint plans for sweeping, vertical inspection and going home.

use nalgebra::{Matrix2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::estimation::{PlanarScan, VehicleState};
use crate::PlanningError;

pub const DEFAULT_TOLERANCE: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub position: Vector3<f64>,
    pub yaw: f64,
    pub tolerance: f64,
    pub dwell: f64,
}

impl Waypoint {
    pub fn new(position: Vector3<f64>, yaw: f64) -> Self {
        Self {
            position,
            yaw,
            tolerance: DEFAULT_TOLERANCE,
            dwell: 0.0,
        }
    }

    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        (self.position - p).norm()
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        self.distance(p) <= self.tolerance
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissionKind {
    Sweep,
    Vertical,
    GoHome,
    KeepPosition,
}

impl MissionKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Sweep => "sweep",
            Self::Vertical => "vertical",
            Self::GoHome => "go_home",
            Self::KeepPosition => "keep_position",
        }
    }
}

fn default_spacing() -> f64 {
    1.0
}

fn default_standoff() -> f64 {
    2.0
}

fn default_margin() -> f64 {
    0.5
}

fn default_offset() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub width: f64,
    pub height: f64,
    #[serde(default = "default_spacing")]
    pub spacing: f64,
    #[serde(default = "default_standoff")]
    pub standoff: f64,
    #[serde(default)]
    pub end_to_end: bool,
    /// Lateral margin kept from each wall end in end-to-end mode.
    #[serde(default = "default_margin")]
    pub margin: f64,
}

impl SweepSpec {
    pub fn new(width: f64, height: f64) -> Self {
        Self {
            width,
            height,
            spacing: default_spacing(),
            standoff: default_standoff(),
            end_to_end: false,
            margin: default_margin(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerticalSpec {
    pub max_height: f64,
    /// Lateral distance of each column from the vehicle's line of sight to the structure.
    #[serde(default = "default_offset")]
    pub offset: f64,
    /// Bearing of the structure relative to the current heading.
    #[serde(default)]
    pub bearing: f64,
    #[serde(default = "default_spacing")]
    pub spacing: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MissionSpec {
    Sweep(SweepSpec),
    Vertical(VerticalSpec),
    GoHome { home: [f64; 3] },
    KeepPosition,
}

impl MissionSpec {
    pub fn kind(&self) -> MissionKind {
        match self {
            Self::Sweep(_) => MissionKind::Sweep,
            Self::Vertical(_) => MissionKind::Vertical,
            Self::GoHome { .. } => MissionKind::GoHome,
            Self::KeepPosition => MissionKind::KeepPosition,
        }
    }

    pub fn validate(&self, z_max: f64) -> Result<(), PlanningError> {
        let bad = |m: &str| Err(PlanningError::InvalidSpec(m.to_string()));
        match self {
            Self::Sweep(s) => {
                if !(s.width > 0.0 || s.end_to_end)
                    || !(s.height >= 0.0)
                    || !(s.spacing > 0.0)
                    || !(s.standoff > 0.0)
                {
                    return bad("sweep width, height, spacing and standoff must be positive");
                }
            }
            Self::Vertical(v) => {
                if !(v.spacing > 0.0) || !(v.max_height > 0.0) || !(v.offset >= 0.0) {
                    return bad("vertical max_height and spacing must be positive");
                }
            }
            Self::GoHome { home } => {
                if !(home[2] > 0.0 && home[2] <= z_max) {
                    return bad("home height outside (0, z_max]");
                }
            }
            Self::KeepPosition => {}
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanStatus {
    #[default]
    Active,
    Complete,
    Stalled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaypointPlan {
    pub kind: MissionKind,
    pub waypoints: Vec<Waypoint>,
    pub spec: Option<MissionSpec>,
    /// Index of the waypoint being pursued; equals the length once complete.
    pub progress: usize,
    pub status: PlanStatus,
    /// True when waypoints were moved below `z_max`.
    pub clipped: bool,
    #[serde(skip)]
    pub(crate) dwell_elapsed: f64,
    #[serde(skip)]
    pub(crate) stall: StallMonitor,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub(crate) struct StallMonitor {
    pub best: Option<f64>,
    pub since: f64,
}

impl WaypointPlan {
    pub fn new(kind: MissionKind, waypoints: Vec<Waypoint>, spec: Option<MissionSpec>) -> Self {
        let status = if waypoints.is_empty() {
            PlanStatus::Complete
        } else {
            PlanStatus::Active
        };
        Self {
            kind,
            waypoints,
            spec,
            progress: 0,
            status,
            clipped: false,
            dwell_elapsed: 0.0,
            stall: StallMonitor::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn current(&self) -> Option<&Waypoint> {
        self.waypoints.get(self.progress)
    }

    pub fn is_complete(&self) -> bool {
        self.status == PlanStatus::Complete
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WallFitConfig {
    pub max_range: f64,
    pub sector_half_angle: f64,
    pub seed_half_angle: f64,
    pub inlier_threshold: f64,
    pub max_rms: f64,
    pub min_inliers: usize,
    /// Largest gap along the wall still counted as the same surface.
    pub extent_gap: f64,
}

impl Default for WallFitConfig {
    fn default() -> Self {
        Self {
            max_range: 6.0,
            sector_half_angle: 60f64.to_radians(),
            seed_half_angle: 15f64.to_radians(),
            inlier_threshold: 0.1,
            max_rms: 0.1,
            min_inliers: 10,
            extent_gap: 0.5,
        }
    }
}

/// A wall line in the world frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WallFit {
    /// Foot of the perpendicular from the vehicle.
    pub point: Vector2<f64>,
    /// Unit vector along the wall.
    pub direction: Vector2<f64>,
    /// Unit normal pointing from the wall toward the vehicle.
    pub normal: Vector2<f64>,
    pub distance: f64,
    pub rms: f64,
    /// Along-wall coordinates of the detected surface ends, relative to `point`.
    pub extent: (f64, f64),
}

impl WallFit {
    pub fn length(&self) -> f64 {
        self.extent.1 - self.extent.0
    }

    /// Yaw that looks straight at the wall.
    pub fn facing_yaw(&self) -> f64 {
        (-self.normal.y).atan2(-self.normal.x)
    }
}

fn fit_line(points: &[Vector2<f64>]) -> (Vector2<f64>, Vector2<f64>) {
    let n = points.len() as f64;
    let c = points.iter().sum::<Vector2<f64>>() / n;
    let mut cov = Matrix2::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let i = if eig.eigenvalues[0] >= eig.eigenvalues[1] {
        0
    } else {
        1
    };
    let dir: Vector2<f64> = eig.eigenvectors.column(i).into_owned();
    (c, dir.normalize())
}

/// Fit the wall in front of the vehicle from the planar scan.
pub fn fit_front_wall(
    scan: &PlanarScan,
    state: &VehicleState,
    config: &WallFitConfig,
) -> Option<WallFit> {
    let sector: Vec<Vector2<f64>> = scan
        .points
        .iter()
        .filter(|p| p.bearing().abs() <= config.sector_half_angle && p.range() <= config.max_range)
        .map(|p| p.point)
        .collect();
    let mut inliers: Vec<Vector2<f64>> = scan
        .points
        .iter()
        .filter(|p| p.bearing().abs() <= config.seed_half_angle && p.range() <= config.max_range)
        .map(|p| p.point)
        .collect();
    if inliers.len() < config.min_inliers {
        return None;
    }
    let mut line = fit_line(&inliers);
    for _ in 0..10 {
        let normal = Vector2::new(-line.1.y, line.1.x);
        let next: Vec<Vector2<f64>> = sector
            .iter()
            .filter(|p| (*p - line.0).dot(&normal).abs() < config.inlier_threshold)
            .copied()
            .collect();
        if next.len() < config.min_inliers {
            return None;
        }
        let stable = next.len() == inliers.len();
        inliers = next;
        line = fit_line(&inliers);
        if stable {
            break;
        }
    }
    let (c, dir) = line;
    let mut normal = Vector2::new(-dir.y, dir.x);
    let rms = (inliers
        .iter()
        .map(|p| (p - c).dot(&normal).powi(2))
        .sum::<f64>()
        / inliers.len() as f64)
        .sqrt();
    if rms >= config.max_rms {
        return None;
    }
    // Orient the normal toward the vehicle at the heading-frame origin.
    if (-c).dot(&normal) < 0.0 {
        normal = -normal;
    }
    let foot = c - dir * c.dot(&dir);
    let distance = (-c).dot(&normal);

    let mut along: Vec<f64> = scan
        .points
        .iter()
        .filter(|p| (p.point - foot).dot(&normal).abs() < config.inlier_threshold)
        .map(|p| (p.point - foot).dot(&dir))
        .collect();
    along.sort_by(f64::total_cmp);
    let centre = along
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, _)| i)?;
    let mut lo = centre;
    while lo > 0 && along[lo] - along[lo - 1] <= config.extent_gap {
        lo -= 1;
    }
    let mut hi = centre;
    while hi + 1 < along.len() && along[hi + 1] - along[hi] <= config.extent_gap {
        hi += 1;
    }

    let rotate = |v: Vector2<f64>| state.to_world(&Vector3::new(v.x, v.y, 0.0)).xy();
    Some(WallFit {
        point: rotate(foot) + state.position.xy(),
        direction: rotate(dir),
        normal: rotate(normal),
        distance,
        rms,
        extent: (along[lo], along[hi]),
    })
}

/// Heights from `start` up to `start + span` every `step`, with the last row
/// at the top. Heights above `z_max` are clipped and merged.
fn column_heights(
    start: f64,
    top: f64,
    step: f64,
    z_max: f64,
    exact_top: bool,
) -> (Vec<f64>, bool) {
    let n = if exact_top {
        ((top - start) / step - 1e-9).ceil().max(0.0) as usize
    } else {
        ((top - start) / step + 1e-9).floor().max(0.0) as usize
    };
    let mut clipped = false;
    let mut zs: Vec<f64> = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let mut z = if exact_top && k == n {
            top
        } else {
            start + k as f64 * step
        };
        if z > z_max {
            z = z_max;
            clipped = true;
        }
        let len = zs.len();
        match zs.last_mut() {
            Some(last) if (z - *last).abs() <= 1e-9 => {}
            // A short final step would put two waypoints inside one tolerance sphere.
            Some(last) if len > 1 && (z - *last).abs() < 0.5 * step => *last = z,
            _ => zs.push(z),
        }
    }
    (zs, clipped)
}

/// Serpentine sweep of a rectangle on a plane parallel to the front wall.
pub fn plan_sweep(
    spec: &SweepSpec,
    state: &VehicleState,
    scan: &PlanarScan,
    z_max: f64,
    wall: &WallFitConfig,
) -> Result<WaypointPlan, PlanningError> {
    MissionSpec::Sweep(*spec).validate(z_max)?;
    let fit = fit_front_wall(scan, state, wall).ok_or(PlanningError::NoInspectableSurface)?;
    let s_vehicle = (state.position.xy() - fit.point).dot(&fit.direction);
    let (s_lo, s_hi) = if spec.end_to_end {
        let lo = fit.extent.0 + spec.margin;
        let hi = fit.extent.1 - spec.margin;
        if hi <= lo {
            return Err(PlanningError::InvalidSpec(format!(
                "wall extent {:.2} m too short",
                fit.length()
            )));
        }
        (lo, hi)
    } else {
        (s_vehicle - spec.width / 2.0, s_vehicle + spec.width / 2.0)
    };
    // Start from the end nearer the vehicle.
    let (first, second) = if (s_lo - s_vehicle).abs() <= (s_hi - s_vehicle).abs() {
        (s_lo, s_hi)
    } else {
        (s_hi, s_lo)
    };
    let (rows, clipped) = column_heights(
        state.position.z,
        state.position.z + spec.height,
        spec.spacing,
        z_max,
        false,
    );

    let yaw = fit.facing_yaw();
    let base = fit.point + fit.normal * spec.standoff;
    let at = |s: f64, z: f64| {
        let p = base + fit.direction * s;
        Waypoint::new(Vector3::new(p.x, p.y, z), yaw)
    };
    let mut waypoints = Vec::with_capacity(rows.len() * 2);
    for (k, z) in rows.iter().enumerate() {
        let (a, b) = if k % 2 == 0 {
            (first, second)
        } else {
            (second, first)
        };
        waypoints.push(at(a, *z));
        waypoints.push(at(b, *z));
    }
    let mut echo = *spec;
    echo.width = s_hi - s_lo;
    let mut plan = WaypointPlan::new(
        MissionKind::Sweep,
        waypoints,
        Some(MissionSpec::Sweep(echo)),
    );
    plan.clipped = clipped;
    Ok(plan)
}

/// Ascend on the left of the structure, cross over at the top, descend on the right.
pub fn plan_vertical(
    spec: &VerticalSpec,
    state: &VehicleState,
    z_max: f64,
) -> Result<WaypointPlan, PlanningError> {
    MissionSpec::Vertical(*spec).validate(z_max)?;
    let yaw = crate::wrap_angle(state.yaw + spec.bearing);
    let left = Vector2::new(-yaw.sin(), yaw.cos());
    let start = state.position.z;
    let top = spec.max_height.max(start);
    let (zs, clipped) = column_heights(start, top, spec.spacing, z_max, true);
    let pl = state.position.xy() + left * spec.offset;
    let pr = state.position.xy() - left * spec.offset;
    let mut waypoints: Vec<Waypoint> = zs
        .iter()
        .map(|z| Waypoint::new(Vector3::new(pl.x, pl.y, *z), yaw))
        .collect();
    waypoints.extend(
        zs.iter()
            .rev()
            .map(|z| Waypoint::new(Vector3::new(pr.x, pr.y, *z), yaw)),
    );
    let mut plan = WaypointPlan::new(
        MissionKind::Vertical,
        waypoints,
        Some(MissionSpec::Vertical(*spec)),
    );
    plan.clipped = clipped;
    Ok(plan)
}

/// Change altitude in place, then fly straight home.
pub fn plan_go_home(
    home: Option<&Waypoint>,
    state: &VehicleState,
) -> Result<WaypointPlan, PlanningError> {
    let home = home.ok_or(PlanningError::HomeNotRecorded)?;
    let spec = Some(MissionSpec::GoHome {
        home: [home.position.x, home.position.y, home.position.z],
    });
    if home.contains(&state.position) {
        return Ok(WaypointPlan::new(MissionKind::GoHome, Vec::new(), spec));
    }
    let mut waypoints = Vec::new();
    if (state.position.z - home.position.z).abs() > home.tolerance {
        let mut climb = Waypoint::new(
            Vector3::new(state.position.x, state.position.y, home.position.z),
            state.yaw,
        );
        climb.tolerance = home.tolerance;
        waypoints.push(climb);
    }
    waypoints.push(*home);
    Ok(WaypointPlan::new(MissionKind::GoHome, waypoints, spec))
}

/// A single-waypoint plan at the current pose.
pub fn plan_keep_position(state: &VehicleState) -> WaypointPlan {
    let mut plan = WaypointPlan::new(
        MissionKind::KeepPosition,
        vec![Waypoint::new(state.position, state.yaw)],
        Some(MissionSpec::KeepPosition),
    );
    plan.status = PlanStatus::Active;
    plan
}
