//! Consecutive-scan registration by iterative closest point.
//!
//! Each current point is paired with its nearest reference return (found
//! through a grid) and measured along the surface normal fitted over that
//! return's neighbours on the same surface.

use std::collections::HashMap;

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::preprocess::{PlanarScan, ScanPoint};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpConfig {
    pub max_iterations: usize,
    pub max_correspondence: f64,
    /// Cauchy kernel width of the coarse and fine alignment stages.
    pub coarse_scale: f64,
    pub fine_scale: f64,
    /// Half-width of the direction-histogram rotation search around the guess; 0 disables it.
    pub rotation_search: f64,
    pub max_step_translation: f64,
    pub max_step_rotation: f64,
    pub inlier_threshold: f64,
    pub fitness_floor: f64,
    pub min_points: usize,
    pub translation_tolerance: f64,
    pub rotation_tolerance: f64,
    /// Scans are registered against a keyframe until the vehicle has moved
    /// this far from it (m, rad) or overlap drops below `keyframe_fitness`.
    /// A zero distance registers consecutive scans.
    pub keyframe_distance: f64,
    pub keyframe_rotation: f64,
    pub keyframe_fitness: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            max_correspondence: 1.0,
            coarse_scale: 0.5,
            fine_scale: 0.05,
            rotation_search: 0.2,
            max_step_translation: 0.1,
            max_step_rotation: 0.03,
            inlier_threshold: 0.05,
            fitness_floor: 0.6,
            min_points: 30,
            translation_tolerance: 1e-4,
            rotation_tolerance: 1e-5,
            keyframe_distance: 0.5,
            keyframe_rotation: 0.35,
            keyframe_fitness: 0.8,
        }
    }
}

/// Rigid transform taking current-scan points into the previous scan frame:
/// `p_prev = R(dpsi) p_curr + (dx, dy)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScanMatchResult {
    pub dx: f64,
    pub dy: f64,
    pub dpsi: f64,
    pub fitness: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl ScanMatchResult {
    /// Pose of the current scan in the reference frame as `(x, y, psi)`.
    pub fn pose(&self) -> (f64, f64, f64) {
        (self.dx, self.dy, self.dpsi)
    }

    fn failed(iterations: usize) -> Self {
        Self {
            iterations,
            ..Self::default()
        }
    }
}

struct Reference<'a> {
    points: &'a [ScanPoint],
    cell: f64,
    grid: HashMap<(i32, i32), Vec<u32>>,
    /// Surface normal fitted over the linked neighbours of each point.
    normals: Vec<Option<Vector2<f64>>>,
}

impl<'a> Reference<'a> {
    fn new(scan: &'a PlanarScan, cell: f64) -> Self {
        let points = scan.points.as_slice();
        let mut grid: HashMap<(i32, i32), Vec<u32>> = HashMap::with_capacity(points.len());
        for (i, p) in points.iter().enumerate() {
            grid.entry(Self::key(&p.point, cell))
                .or_default()
                .push(i as u32);
        }
        let linked = points
            .windows(2)
            .map(|w| {
                let gap = (w[1].point - w[0].point).norm();
                w[1].beam == w[0].beam + 1 && gap < (0.1 * w[0].range()).max(0.15)
            })
            .collect::<Vec<bool>>();
        let normals = (0..points.len())
            .map(|i| fit_normal(points, &linked, i))
            .collect();
        Self {
            points,
            cell,
            grid,
            normals,
        }
    }

    fn key(p: &Vector2<f64>, cell: f64) -> (i32, i32) {
        ((p.x / cell).floor() as i32, (p.y / cell).floor() as i32)
    }

    fn nearest(&self, q: &Vector2<f64>) -> Option<usize> {
        let (kx, ky) = Self::key(q, self.cell);
        let mut best: Option<(f64, usize)> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(bucket) = self.grid.get(&(kx + dx, ky + dy)) {
                    for &i in bucket {
                        let d = (self.points[i as usize].point - q).norm_squared();
                        if best.is_none_or(|(bd, bi)| d < bd || (d == bd && (i as usize) < bi)) {
                            best = Some((d, i as usize));
                        }
                    }
                }
            }
        }
        best.map(|(_, i)| i)
    }

    /// Closest point on the reference surface near point index `i`, with the
    /// fitted surface normal there (absent at isolated points).
    fn closest_on_surface(
        &self,
        i: usize,
        q: &Vector2<f64>,
    ) -> (Vector2<f64>, Option<Vector2<f64>>) {
        let p = self.points[i].point;
        match self.normals[i] {
            Some(n) => (q - n * n.dot(&(q - p)), Some(n)),
            None => (p, None),
        }
    }
}

/// Principal direction of the points within `NORMAL_SPAN` metres of `i` along
/// its surface. Needs at least three points.
fn fit_normal(points: &[ScanPoint], linked: &[bool], i: usize) -> Option<Vector2<f64>> {
    const NORMAL_SPAN: f64 = 0.2;
    const MAX_NEIGHBOURS: usize = 6;
    let centre = points[i].point;
    let mut lo = i;
    while lo > 0
        && linked[lo - 1]
        && i - lo < MAX_NEIGHBOURS
        && (points[lo - 1].point - centre).norm() <= NORMAL_SPAN
    {
        lo -= 1;
    }
    let mut hi = i;
    while hi + 1 < points.len()
        && linked[hi]
        && hi - i < MAX_NEIGHBOURS
        && (points[hi + 1].point - centre).norm() <= NORMAL_SPAN
    {
        hi += 1;
    }
    if hi - lo < 2 {
        return None;
    }
    let n = (hi - lo + 1) as f64;
    let mean = points[lo..=hi]
        .iter()
        .map(|p| p.point)
        .sum::<Vector2<f64>>()
        / n;
    let mut cov = nalgebra::Matrix2::zeros();
    for p in &points[lo..=hi] {
        let d = p.point - mean;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let k = if eig.eigenvalues[0] < eig.eigenvalues[1] {
        0
    } else {
        1
    };
    Some(eig.eigenvectors.column(k).into_owned())
}

const HEADING_BINS: usize = 360;

/// Histogram of local surface directions (mod pi). Each point contributes the
/// direction to the first point at least `baseline` away along the same
/// surface, which keeps range noise from dominating short chords.
fn heading_histogram(scan: &PlanarScan) -> Vec<f64> {
    const BASELINE: f64 = 0.3;
    let mut h = vec![0.0; HEADING_BINS];
    let bin = std::f64::consts::PI / HEADING_BINS as f64;
    let pts = &scan.points;
    for i in 0..pts.len() {
        let mut j = i;
        while j + 1 < pts.len() {
            let gap = (pts[j + 1].point - pts[j].point).norm();
            if pts[j + 1].beam != pts[j].beam + 1 || gap >= (0.1 * pts[j].range()).max(0.15) {
                break;
            }
            j += 1;
            let d = pts[j].point - pts[i].point;
            if d.norm() >= BASELINE {
                let theta = d.y.atan2(d.x).rem_euclid(std::f64::consts::PI);
                h[((theta / bin) as usize).min(HEADING_BINS - 1)] += 1.0;
                break;
            }
        }
    }
    // Circular smoothing absorbs range noise on short segments.
    (0..HEADING_BINS)
        .map(|k| {
            (-3i32..=3)
                .map(|o| {
                    let j = (k as i32 + o).rem_euclid(HEADING_BINS as i32) as usize;
                    h[j] * (1.0 - o.abs() as f64 / 4.0)
                })
                .sum()
        })
        .collect()
}

/// Rotation between two scans from their direction histograms, searched within
/// `window` of `guess`. Returns `guess` when the histograms are uninformative.
fn coarse_rotation(prev: &PlanarScan, curr: &PlanarScan, guess: f64, window: f64) -> f64 {
    let hp = heading_histogram(prev);
    let hc = heading_histogram(curr);
    let bin = std::f64::consts::PI / HEADING_BINS as f64;
    let score = |shift: i32| -> f64 {
        (0..HEADING_BINS)
            .map(|k| hc[k] * hp[(k as i32 + shift).rem_euclid(HEADING_BINS as i32) as usize])
            .sum()
    };
    let center = (guess / bin).round() as i32;
    let span = (window / bin).ceil() as i32;
    let scores: Vec<(i32, f64)> = (center - span..=center + span)
        .map(|k| (k, score(k)))
        .collect();
    let Some(&(best, top)) = scores.iter().max_by(|a, b| a.1.total_cmp(&b.1)) else {
        return guess;
    };
    let at_guess = score(center);
    if top <= 0.0 || top < 1.02 * at_guess {
        return guess;
    }
    // Parabolic refinement around the peak.
    let (l, r) = (score(best - 1), score(best + 1));
    let denom = l - 2.0 * top + r;
    let frac = if denom < 0.0 {
        (0.5 * (l - r) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    (best as f64 + frac) * bin
}

fn apply(dx: f64, dy: f64, dpsi: f64, p: &Vector2<f64>) -> Vector2<f64> {
    let (s, c) = dpsi.sin_cos();
    Vector2::new(c * p.x - s * p.y + dx, s * p.x + c * p.y + dy)
}

/// Register `curr` against `prev`, starting from `guess = (dx, dy, dpsi)`.
///
/// Each iteration pairs every current point with its closest point on the
/// previous scan and takes one Gauss-Newton step on the summed squared
/// distances, measured along the surface normal where one exists.
pub fn match_scans(
    prev: &PlanarScan,
    curr: &PlanarScan,
    guess: (f64, f64, f64),
    config: &IcpConfig,
) -> ScanMatchResult {
    if prev.len() < config.min_points || curr.len() < config.min_points {
        return ScanMatchResult::failed(0);
    }
    let reference = Reference::new(prev, config.max_correspondence);
    let max_d2 = config.max_correspondence * config.max_correspondence;
    let (mut dx, mut dy, mut dpsi) = guess;
    if config.rotation_search > 0.0 {
        dpsi = coarse_rotation(prev, curr, dpsi, config.rotation_search);
    }
    let mut converged = false;
    let mut iterations = 0;
    let mut pairs = Vec::with_capacity(curr.len());
    let mut coarse = true;
    let mut prev_step = Vector3::zeros();

    while iterations < config.max_iterations {
        iterations += 1;
        let (s, c) = dpsi.sin_cos();
        pairs.clear();
        for sp in &curr.points {
            let q = apply(dx, dy, dpsi, &sp.point);
            let Some(i) = reference.nearest(&q) else {
                continue;
            };
            if (reference.points[i].point - q).norm_squared() > max_d2 {
                continue;
            }
            let (target, normal) = reference.closest_on_surface(i, &q);
            pairs.push((sp.point, q - target, normal));
        }
        if pairs.len() < config.min_points {
            return ScanMatchResult::failed(iterations);
        }
        // Wide Cauchy kernel until the coarse alignment settles, then a tight
        // one that discounts occlusion edges and newly visible surfaces.
        let (scale, tol) = if coarse {
            (config.coarse_scale, 10.0)
        } else {
            (config.fine_scale, 1.0)
        };

        let mut h = Matrix3::zeros();
        let mut g = Vector3::zeros();
        let mut used = 0;
        for (p, r, normal) in &pairs {
            let w = 1.0 / (1.0 + r.norm_squared() / (scale * scale));
            if w < 0.1 {
                continue;
            }
            used += 1;
            // d(q)/d(dpsi) for the rotated point.
            let dq = Vector2::new(-s * p.x - c * p.y, c * p.x - s * p.y);
            let mut add_row = |n: Vector2<f64>| {
                let j = Vector3::new(n.x, n.y, n.dot(&dq));
                h += j * j.transpose() * w;
                g += j * (w * n.dot(r));
            };
            match normal {
                Some(n) => add_row(*n),
                None => {
                    add_row(Vector2::x());
                    add_row(Vector2::y());
                }
            }
        }
        if used < config.min_points {
            return ScanMatchResult::failed(iterations);
        }
        // Light damping keeps degenerate geometry (a single straight wall) solvable.
        let damping = 1e-9 * h.trace().max(1.0);
        let Some(mut step) = (h + Matrix3::identity() * damping).lu().solve(&(-g)) else {
            return ScanMatchResult::failed(iterations);
        };
        // Bound each step; early correspondences can be badly wrong.
        let scale = (config.max_step_translation / step.xy().norm())
            .min(config.max_step_rotation / step.z.abs())
            .min(1.0);
        step *= scale;
        // A step that undoes the previous one means correspondences are
        // flipping between two sets: settle halfway.
        let small = step.xy().norm() < 10.0 * config.translation_tolerance
            && step.z.abs() < 10.0 * config.rotation_tolerance;
        let flipping = !coarse && small && step.dot(&prev_step) < 0.0;
        if flipping {
            step *= 0.5;
        }
        prev_step = step;
        dx += step.x;
        dy += step.y;
        dpsi = crate::wrap_angle(dpsi + step.z);
        let step_t = (step.x * step.x + step.y * step.y).sqrt();
        if flipping {
            converged = true;
            break;
        }
        if step_t < tol * config.translation_tolerance
            && step.z.abs() < tol * config.rotation_tolerance
        {
            if coarse {
                coarse = false;
            } else {
                converged = true;
                break;
            }
        }
    }

    let inliers = curr
        .points
        .iter()
        .filter(|sp| {
            let q = apply(dx, dy, dpsi, &sp.point);
            reference
                .nearest(&q)
                .map(|i| {
                    (reference.closest_on_surface(i, &q).0 - q).norm() < config.inlier_threshold
                })
                .unwrap_or(false)
        })
        .count();
    let fitness = inliers as f64 / curr.len() as f64;
    let converged = converged && fitness >= config.fitness_floor;
    ScanMatchResult {
        dx,
        dy,
        dpsi,
        fitness,
        converged,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::PlanarScan;
    use crate::sim::{cast_laser_scan, LaserConfig, VehicleTruth, WorldModel};
    use nalgebra::Vector3;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn corner_room() -> WorldModel {
        WorldModel::from_json(
            r#"{"walls":[{"points":[[-4,-3],[6,-3],[6,1],[3,1],[3,4],[-4,4],[-4,-3]],"height":5}],
                "boxes":[{"min":[-1.5,2.0,0],"max":[-1.0,2.5,5]}],"ceiling_height":5}"#,
        )
        .unwrap()
    }

    fn scan_at(world: &WorldModel, x: f64, y: f64, yaw: f64, sigma: f64, seed: u64) -> PlanarScan {
        let truth = VehicleTruth::hovering(Vector3::new(x, y, 1.0), yaw);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = cast_laser_scan(&truth, world, &LaserConfig::default(), sigma, &mut rng);
        PlanarScan::project(&raw, 0.0, 0.0)
    }

    #[test]
    fn self_match_is_identity() {
        let w = corner_room();
        let s = scan_at(&w, 0.0, 0.0, 0.0, 0.01, 1);
        let r = match_scans(&s, &s, (0.0, 0.0, 0.0), &IcpConfig::default());
        assert!(r.converged);
        assert!(r.dx.abs() < 1e-6 && r.dy.abs() < 1e-6 && r.dpsi.abs() < 1e-6);
        assert!((r.fitness - 1.0).abs() < 1e-9);
    }

    #[test]
    fn recovers_forward_offset_from_ray_cast_pair() {
        let w = corner_room();
        let prev = scan_at(&w, 0.0, 0.0, 0.0, 0.01, 1);
        let curr = scan_at(&w, 0.1, 0.0, 0.0, 0.01, 2);
        let r = match_scans(&prev, &curr, (0.0, 0.0, 0.0), &IcpConfig::default());
        assert!(r.converged, "{r:?}");
        assert!(
            (r.dx - 0.1).abs() < 0.02 && r.dy.abs() < 0.02 && r.dpsi.abs() < 0.01,
            "{r:?}"
        );
    }

    #[test]
    fn recovers_rotation_in_corner_room() {
        let w = corner_room();
        let prev = scan_at(&w, 0.5, 0.2, 0.0, 0.01, 3);
        let curr = scan_at(&w, 0.5, 0.2, 0.05, 0.01, 4);
        let r = match_scans(&prev, &curr, (0.0, 0.0, 0.0), &IcpConfig::default());
        assert!(r.converged, "{r:?}");
        assert!((r.dpsi - 0.05).abs() < 0.01, "{r:?}");
    }

    #[test]
    fn too_few_points_fails_with_zero_fitness() {
        let s = PlanarScan::from_points((0..10).map(|i| Vector2::new(1.0, i as f64 * 0.1)));
        let r = match_scans(&s, &s, (0.0, 0.0, 0.0), &IcpConfig::default());
        assert!(!r.converged);
        assert_eq!(r.fitness, 0.0);
    }

    #[test]
    fn unrelated_scans_do_not_claim_convergence() {
        let a =
            PlanarScan::from_points((0..200).map(|i| Vector2::new(2.0, -2.0 + i as f64 * 0.02)));
        let b = PlanarScan::from_points((0..200).map(|i| {
            let t = i as f64 * 0.0314;
            Vector2::new(6.0 * t.cos(), 6.0 * t.sin())
        }));
        let r = match_scans(&a, &b, (0.0, 0.0, 0.0), &IcpConfig::default());
        assert!(!r.converged);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn self_match_identity_for_any_pose(x in -2.0f64..4.0, y in -2.0f64..2.5, yaw in -3.1f64..3.1, seed in 0u64..1000) {
            let w = corner_room();
            let s = scan_at(&w, x, y, yaw, 0.01, seed);
            prop_assume!(s.len() >= 30);
            let r = match_scans(&s, &s, (0.0, 0.0, 0.0), &IcpConfig::default());
            prop_assert!(r.dx.abs() < 1e-6 && r.dy.abs() < 1e-6 && r.dpsi.abs() < 1e-6);
        }

        #[test]
        fn recovers_small_pose_offsets(x in -1.0f64..2.0, y in -1.0f64..1.5, yaw in -3.1f64..3.1,
                                       tx in -0.3f64..0.3, ty in -0.3f64..0.3, tpsi in -0.1f64..0.1, seed in 0u64..1000) {
            let w = corner_room();
            let prev = scan_at(&w, x, y, yaw, 0.01, seed);
            let (s, c) = yaw.sin_cos();
            let curr = scan_at(&w, x + c * tx - s * ty, y + s * tx + c * ty, yaw + tpsi, 0.01, seed + 1);
            let r = match_scans(&prev, &curr, (0.0, 0.0, 0.0), &IcpConfig::default());
            prop_assert!(r.converged, "{:?}", r);
            prop_assert!((r.dx - tx).abs() < 0.02 && (r.dy - ty).abs() < 0.02 && (r.dpsi - tpsi).abs() < 0.01, "{:?}", r);
        }
    }
}
