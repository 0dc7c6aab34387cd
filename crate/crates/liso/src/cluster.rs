//! Turns one frame (points + flow + ego-motion) into candidate boxes of
//! moving objects.
//!
//! The stage chain per frame:
//!
//! 1. residual flow: subtract the part of the scene flow explained by
//!    ego-motion, leaving only actual object motion
//! 2. static filter: drop ground points and everything at or below the
//!    static-speed threshold
//! 3. 6D DBSCAN over (x, y, z, scaled flow): position and motion jointly
//!    separate nearby objects moving differently
//! 4. box fitting: heading from the mean residual flow, extents from the
//!    flow-aligned min/max of the cluster
//! 5. degenerate-box discard by aspect, area, and volume

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::geom::{wrap_angle, Box3d, FlowVector, Point3, PointFrame};
use crate::synth::derive_rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterParams {
    /// Residual speed below which a point counts as static, m/s.
    pub static_speed_threshold: f64,
    pub dbscan_eps: f64,
    pub dbscan_min_pts: usize,
    /// Discard boxes with length/width above this.
    pub max_aspect: f64,
    /// Discard boxes with BEV area below this, m².
    pub min_area: f64,
    /// Discard boxes with volume below this, m³.
    pub min_volume: f64,
    /// Multiplier applied to flow components before 6D clustering.
    pub flow_feature_scale: f64,
    /// Vertical clearance above the fitted plane for the fallback ground
    /// filter, used only when a frame carries no ground mask.
    pub ground_clearance: f64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            static_speed_threshold: 1.0,
            dbscan_eps: 1.0,
            dbscan_min_pts: 5,
            max_aspect: 4.0,
            min_area: 0.35,
            min_volume: 0.5,
            flow_feature_scale: 1.0,
            ground_clearance: 0.25,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<()> {
        for (k, v) in [
            ("static_speed_threshold", self.static_speed_threshold),
            ("dbscan_eps", self.dbscan_eps),
            ("max_aspect", self.max_aspect),
            ("min_area", self.min_area),
            ("min_volume", self.min_volume),
            ("flow_feature_scale", self.flow_feature_scale),
            ("ground_clearance", self.ground_clearance),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParam(format!("{k} must be positive, got {v}")));
            }
        }
        if self.dbscan_min_pts == 0 {
            return Err(Error::InvalidParam("dbscan_min_pts must be positive".into()));
        }
        Ok(())
    }
}

/// Residual flow per point: measured flow minus the static-scene flow
/// implied by the ego step.
pub fn residual_flow(frame: &PointFrame) -> Result<Vec<FlowVector>> {
    let flow = frame.flow.as_ref().ok_or_else(|| {
        Error::InvalidParam(format!("frame {} has no flow channel", frame.timestamp_index))
    })?;
    let pose = frame.pose_to_next.ok_or_else(|| {
        Error::InvalidParam(format!("frame {} has no ego pose", frame.timestamp_index))
    })?;
    if flow.len() != frame.points.len() {
        return Err(Error::LengthMismatch {
            what: format!("frame {} flow", frame.timestamp_index),
            path: Default::default(),
            expected: frame.points.len(),
            got: flow.len(),
        });
    }
    let inv = pose.inverse();
    Ok(frame
        .points
        .iter()
        .zip(flow)
        .map(|(p, f)| {
            // f_sta = (T^-1 - I) p; residual = f - f_sta
            let moved = inv.apply(p);
            FlowVector::new(
                f.dx - (moved.x - p.x),
                f.dy - (moved.y - p.y),
                f.dz - (moved.z - p.z),
            )
        })
        .collect())
}

/// Indices of dynamic points: ground points are removed first, then
/// everything at or below the static speed threshold.
pub fn filter_static(
    residual: &[FlowVector],
    ground_mask: Option<&[bool]>,
    params: &ClusterParams,
    frame_interval_s: f64,
) -> Vec<usize> {
    residual
        .iter()
        .enumerate()
        .filter(|(i, f)| {
            if let Some(mask) = ground_mask {
                if mask[*i] {
                    return false;
                }
            }
            f.norm() / frame_interval_s > params.static_speed_threshold
        })
        .map(|(i, _)| i)
        .collect()
}

fn feature_dist_sq(a: usize, b: usize, points: &[Point3], flow: &[FlowVector], scale: f64) -> f64 {
    let dx = points[a].x - points[b].x;
    let dy = points[a].y - points[b].y;
    let dz = points[a].z - points[b].z;
    let fx = (flow[a].dx - flow[b].dx) * scale;
    let fy = (flow[a].dy - flow[b].dy) * scale;
    let fz = (flow[a].dz - flow[b].dz) * scale;
    dx * dx + dy * dy + dz * dz + fx * fx + fy * fy + fz * fz
}

/// Uniform grid over xyz with cell size eps. The 6D distance dominates the
/// 3D distance, so scanning the 27 surrounding cells is exhaustive.
struct SpatialGrid {
    cells: HashMap<(i64, i64, i64), Vec<usize>>,
    eps: f64,
}

impl SpatialGrid {
    fn build(points: &[Point3], eps: f64) -> Self {
        let mut cells: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, eps)).or_default().push(i);
        }
        SpatialGrid { cells, eps }
    }

    fn key(p: &Point3, eps: f64) -> (i64, i64, i64) {
        (
            (p.x / eps).floor() as i64,
            (p.y / eps).floor() as i64,
            (p.z / eps).floor() as i64,
        )
    }

    fn neighbors(&self, i: usize, points: &[Point3], flow: &[FlowVector], scale: f64) -> Vec<usize> {
        let key = Self::key(&points[i], self.eps);
        let eps_sq = self.eps * self.eps;
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(cell) = self.cells.get(&(key.0 + dx, key.1 + dy, key.2 + dz)) {
                        for &j in cell {
                            if feature_dist_sq(i, j, points, flow, scale) <= eps_sq {
                                out.push(j);
                            }
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// DBSCAN over the 6D feature (x, y, z, scale*dx, scale*dy, scale*dz).
///
/// Neighborhoods are inclusive (distance <= eps, counting the point itself);
/// a point is core when its neighborhood has at least `min_pts` members.
/// Core points are grouped by connectivity; a border point joins the cluster
/// of its lowest-index core neighbor, which makes the output independent of
/// traversal order. Noise points stay unassigned. Clusters come back with
/// ascending member indices, ordered by their smallest member.
pub fn cluster_6d(points: &[Point3], residual: &[FlowVector], params: &ClusterParams) -> Vec<Vec<usize>> {
    assert_eq!(points.len(), residual.len(), "points and flow must align");
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }
    let grid = SpatialGrid::build(points, params.dbscan_eps);
    let scale = params.flow_feature_scale;
    let neighborhoods: Vec<Vec<usize>> = (0..n)
        .map(|i| grid.neighbors(i, points, residual, scale))
        .collect();
    let is_core: Vec<bool> = neighborhoods
        .iter()
        .map(|nb| nb.len() >= params.dbscan_min_pts)
        .collect();

    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        if !is_core[i] {
            continue;
        }
        for &j in &neighborhoods[i] {
            if is_core[j] {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }

    let mut members: HashMap<usize, Vec<usize>> = HashMap::new();
    for i in 0..n {
        if is_core[i] {
            let root = find(&mut parent, i);
            members.entry(root).or_default().push(i);
        }
    }
    for i in 0..n {
        if is_core[i] {
            continue;
        }
        // Neighborhoods are sorted, so this picks the lowest-index core.
        if let Some(&core) = neighborhoods[i].iter().find(|&&j| is_core[j]) {
            let root = find(&mut parent, core);
            members.entry(root).or_default().push(i);
        }
    }

    let mut clusters: Vec<Vec<usize>> = members.into_values().collect();
    for c in &mut clusters {
        c.sort_unstable();
    }
    clusters.sort_by_key(|c| c[0]);
    clusters
}

/// A fitted candidate box plus how its heading was derived.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FittedBox {
    pub bbox: Box3d,
    /// False when the cluster had no net flow and the heading fell back to
    /// the minimum-area rectangle.
    pub heading_from_flow: bool,
}

/// Extents never collapse below this, so fitted boxes stay valid; slivers
/// die in the degenerate-box discard anyway.
const MIN_EXTENT: f64 = 0.01;

/// Fits a box to a cluster: heading along the mean BEV residual flow,
/// extents from the min/max of the points in the heading-aligned frame,
/// confidence 1.
pub fn fit_box(points: &[Point3], residual: &[FlowVector]) -> Result<FittedBox> {
    if points.is_empty() {
        return Err(Error::InvalidParam("cannot fit a box to an empty cluster".into()));
    }
    let n = points.len() as f64;
    let mean_dx = residual.iter().map(|f| f.dx).sum::<f64>() / n;
    let mean_dy = residual.iter().map(|f| f.dy).sum::<f64>() / n;
    let flow_norm = (mean_dx * mean_dx + mean_dy * mean_dy).sqrt();

    let (heading, heading_from_flow) = if flow_norm > 1e-9 {
        (mean_dy.atan2(mean_dx), true)
    } else {
        let bev: Vec<[f64; 2]> = points.iter().map(|p| [p.x, p.y]).collect();
        (min_area_rect_heading(&bev), false)
    };

    let (s, c) = heading.sin_cos();
    let mut u_min = f64::INFINITY;
    let mut u_max = f64::NEG_INFINITY;
    let mut v_min = f64::INFINITY;
    let mut v_max = f64::NEG_INFINITY;
    let mut z_min = f64::INFINITY;
    let mut z_max = f64::NEG_INFINITY;
    for p in points {
        let u = c * p.x + s * p.y;
        let v = -s * p.x + c * p.y;
        u_min = u_min.min(u);
        u_max = u_max.max(u);
        v_min = v_min.min(v);
        v_max = v_max.max(v);
        z_min = z_min.min(p.z);
        z_max = z_max.max(p.z);
    }
    let mid_u = (u_min + u_max) / 2.0;
    let mid_v = (v_min + v_max) / 2.0;
    let center = Point3::new(
        c * mid_u - s * mid_v,
        s * mid_u + c * mid_v,
        (z_min + z_max) / 2.0,
    );
    Ok(FittedBox {
        bbox: Box3d::new(
            center,
            (u_max - u_min).max(MIN_EXTENT),
            (v_max - v_min).max(MIN_EXTENT),
            (z_max - z_min).max(MIN_EXTENT),
            heading,
            1.0,
        )?,
        heading_from_flow,
    })
}

/// Heading of the minimum-area enclosing rectangle, oriented along its
/// longer side, in `[-pi, pi)`.
pub fn min_area_rect_heading(points: &[[f64; 2]]) -> f64 {
    let hull = convex_hull(points);
    if hull.len() < 2 {
        return 0.0;
    }
    if hull.len() == 2 {
        return wrap_angle((hull[1][1] - hull[0][1]).atan2(hull[1][0] - hull[0][0]));
    }
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..hull.len() {
        let [x0, y0] = hull[i];
        let [x1, y1] = hull[(i + 1) % hull.len()];
        let phi = (y1 - y0).atan2(x1 - x0);
        let (s, c) = phi.sin_cos();
        let mut u_min = f64::INFINITY;
        let mut u_max = f64::NEG_INFINITY;
        let mut v_min = f64::INFINITY;
        let mut v_max = f64::NEG_INFINITY;
        for [x, y] in &hull {
            let u = c * x + s * y;
            let v = -s * x + c * y;
            u_min = u_min.min(u);
            u_max = u_max.max(u);
            v_min = v_min.min(v);
            v_max = v_max.max(v);
        }
        let du = u_max - u_min;
        let dv = v_max - v_min;
        let area = du * dv;
        if area < best.0 {
            // Orient along the longer rectangle side.
            let heading = if du >= dv {
                phi
            } else {
                phi + std::f64::consts::FRAC_PI_2
            };
            best = (area, wrap_angle(heading));
        }
    }
    best.1
}

/// Andrew monotone chain; returns the hull in counter-clockwise order.
fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: &[f64; 2], a: &[f64; 2], b: &[f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut lower: Vec<[f64; 2]> = Vec::new();
    for p in &pts {
        while lower.len() >= 2 && cross(&lower[lower.len() - 2], &lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(*p);
    }
    let mut upper: Vec<[f64; 2]> = Vec::new();
    for p in pts.iter().rev() {
        while upper.len() >= 2 && cross(&upper[upper.len() - 2], &upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(*p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// True when a box fails the aspect, area, or volume test.
pub fn box_is_degenerate(b: &Box3d, params: &ClusterParams) -> bool {
    b.length / b.width > params.max_aspect
        || b.area_bev() < params.min_area
        || b.volume() < params.min_volume
}

/// Removes degenerate boxes, preserving order.
pub fn discard_degenerate(boxes: Vec<FittedBox>, params: &ClusterParams) -> Vec<FittedBox> {
    boxes
        .into_iter()
        .filter(|fb| !box_is_degenerate(&fb.bbox, params))
        .collect()
}

/// Fallback ground estimate: RANSAC plane fit, then everything within
/// `clearance` above the plane is ground. Returns all-false when no
/// near-horizontal plane gathers enough inliers.
pub fn estimate_ground_mask(points: &[Point3], clearance: f64, seed: u64) -> Vec<bool> {
    let n = points.len();
    if n < 20 {
        return vec![false; n];
    }
    // Work inside the lowest half-meter band: a true ground plane explains
    // nearly all of it, while vertical object faces spread uniformly in z
    // and explain only a thin slice.
    let mut zs: Vec<f64> = points.iter().map(|p| p.z).collect();
    zs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let z_low = zs[n / 20] + 0.5;
    let low_band: Vec<usize> = (0..n).filter(|&i| points[i].z <= z_low).collect();
    if low_band.len() < 10 {
        return vec![false; n];
    }
    let mut rng: ChaCha8Rng = derive_rng(seed, &[0x67, n as u64]);
    let inlier_tol = 0.08;
    let mut best_inliers = 0usize;
    let mut best_plane = None; // z = a*x + b*y + c
    for _ in 0..120 {
        let i = low_band[rng.random_range(0..low_band.len())];
        let j = low_band[rng.random_range(0..low_band.len())];
        let k = low_band[rng.random_range(0..low_band.len())];
        if i == j || j == k || i == k {
            continue;
        }
        let (p, q, r) = (&points[i], &points[j], &points[k]);
        let (ux, uy, uz) = (q.x - p.x, q.y - p.y, q.z - p.z);
        let (vx, vy, vz) = (r.x - p.x, r.y - p.y, r.z - p.z);
        let nx = uy * vz - uz * vy;
        let ny = uz * vx - ux * vz;
        let nz = ux * vy - uy * vx;
        let norm = (nx * nx + ny * ny + nz * nz).sqrt();
        if norm < 1e-12 || nz.abs() / norm < 0.99 {
            continue; // degenerate or more than ~8 degrees off horizontal
        }
        let a = -nx / nz;
        let b = -ny / nz;
        let c = p.z - a * p.x - b * p.y;
        let inliers = low_band
            .iter()
            .filter(|&&idx| {
                let pt = &points[idx];
                (pt.z - (a * pt.x + b * pt.y + c)).abs() <= inlier_tol
            })
            .count();
        if inliers > best_inliers {
            best_inliers = inliers;
            best_plane = Some((a, b, c));
        }
    }
    match best_plane {
        Some((a, b, c)) if best_inliers >= (low_band.len() / 2).max(10) => points
            .iter()
            .map(|p| p.z - (a * p.x + b * p.y + c) <= clearance)
            .collect(),
        _ => vec![false; n],
    }
}

/// Full per-frame mining: ground handling, residual flow, static filter,
/// clustering, fitting, degenerate discard.
pub fn mine_frame(
    frame: &PointFrame,
    params: &ClusterParams,
    frame_interval_s: f64,
    ground_seed: u64,
) -> Result<Vec<FittedBox>> {
    params.validate()?;
    if !(frame_interval_s.is_finite() && frame_interval_s > 0.0) {
        return Err(Error::InvalidParam(format!(
            "frame_interval_s must be positive, got {frame_interval_s}"
        )));
    }
    let residual = residual_flow(frame)?;
    let fallback_mask;
    let mask: Option<&[bool]> = match &frame.ground_mask {
        Some(m) => Some(m),
        None => {
            fallback_mask = estimate_ground_mask(
                &frame.points,
                params.ground_clearance,
                ground_seed ^ frame.timestamp_index as u64,
            );
            Some(&fallback_mask)
        }
    };
    let dynamic = filter_static(&residual, mask, params, frame_interval_s);
    let dyn_points: Vec<Point3> = dynamic.iter().map(|&i| frame.points[i]).collect();
    let dyn_flow: Vec<FlowVector> = dynamic.iter().map(|&i| residual[i]).collect();
    let clusters = cluster_6d(&dyn_points, &dyn_flow, params);
    let mut boxes = Vec::with_capacity(clusters.len());
    for cluster in &clusters {
        let pts: Vec<Point3> = cluster.iter().map(|&i| dyn_points[i]).collect();
        let flow: Vec<FlowVector> = cluster.iter().map(|&i| dyn_flow[i]).collect();
        boxes.push(fit_box(&pts, &flow)?);
    }
    Ok(discard_degenerate(boxes, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::RigidTransform;
    use crate::synth::{self, ActorSpec, ArcSegment, Trajectory, WorldSpec};
    use proptest::prelude::*;

    fn params() -> ClusterParams {
        ClusterParams::default()
    }

    fn frame_with(points: Vec<Point3>, flow: Vec<FlowVector>, pose: RigidTransform) -> PointFrame {
        PointFrame {
            timestamp_index: 0,
            points,
            flow: Some(flow),
            ground_mask: None,
            pose_to_next: Some(pose),
        }
    }

    #[test]
    fn residual_equals_flow_under_identity_pose() {
        let f = frame_with(
            vec![Point3::new(1.0, 2.0, 3.0), Point3::new(-4.0, 0.0, 1.0)],
            vec![FlowVector::new(0.5, -0.25, 0.1), FlowVector::new(0.0, 1.0, 0.0)],
            RigidTransform::identity(),
        );
        let r = residual_flow(&f).unwrap();
        assert_eq!(r, *f.flow.as_ref().unwrap());
    }

    #[test]
    fn residual_cancels_constructed_static_flow() {
        // Ego translates +1 m/frame; a static point has f = f_sta exactly.
        let pose = RigidTransform::from_yaw_translation(0.0, 1.0, 0.0, 0.0);
        let inv = pose.inverse();
        let p = Point3::new(7.0, -3.0, 0.5);
        let moved = inv.apply(&p);
        let f_sta = FlowVector::new(moved.x - p.x, moved.y - p.y, moved.z - p.z);
        let f = frame_with(vec![p], vec![f_sta], pose);
        let r = residual_flow(&f).unwrap();
        assert!(r[0].norm() < 1e-9);
    }

    #[test]
    fn residual_recovers_actor_speed_from_synth_world() {
        let spec = WorldSpec {
            seed: 3,
            actors: vec![ActorSpec {
                size: (4.0, 2.0, 1.5),
                trajectory: Trajectory::straight(10.0, 0.0, 0.0, 20.0, 5), // 2 m/frame
                spawn_frame: 0,
                despawn_frame: 5,
                movable_but_static: false,
            }],
            ego: Trajectory::straight(0.0, -5.0, 0.2, 6.0, 5),
            background_density_per_m2: 0.0,
            ground_density_per_m2: 0.0,
            emit_ground_mask: false,
            points_per_actor_surface: 4.0,
            noise_sigma: 0.0,
            frame_count: 5,
            frame_interval_s: 0.1,
            world_half_extent: 40.0,
        };
        let world = synth::generate(&spec).unwrap();
        let r = residual_flow(&world.frames[0]).unwrap();
        for f in &r {
            assert!((f.norm() - 2.0).abs() < 1e-6, "residual speed {}", f.norm());
        }
    }

    #[test]
    fn residual_requires_flow_and_pose() {
        let mut f = frame_with(
            vec![Point3::new(0.0, 0.0, 0.0)],
            vec![FlowVector::zero()],
            RigidTransform::identity(),
        );
        f.flow = None;
        assert!(residual_flow(&f).is_err());
        let mut g = frame_with(
            vec![Point3::new(0.0, 0.0, 0.0)],
            vec![FlowVector::zero()],
            RigidTransform::identity(),
        );
        g.pose_to_next = None;
        assert!(residual_flow(&g).is_err());
    }

    #[test]
    fn filter_static_all_zero_flow_is_empty() {
        let residual = vec![FlowVector::zero(); 8];
        assert!(filter_static(&residual, None, &params(), 0.1).is_empty());
    }

    #[test]
    fn filter_static_threshold_straddle() {
        // dt = 1 s, so flow magnitude is speed in m/s directly.
        let residual = vec![
            FlowVector::zero(),
            FlowVector::new(1.5, 0.0, 0.0),
            FlowVector::new(0.99, 0.0, 0.0),
            FlowVector::new(1.0, 0.0, 0.0), // exactly at threshold: static
        ];
        let kept = filter_static(&residual, None, &params(), 1.0);
        assert_eq!(kept, vec![1]);
    }

    #[test]
    fn filter_static_removes_ground_first() {
        let residual = vec![FlowVector::new(3.0, 0.0, 0.0); 4];
        let mask = vec![true, false, true, false];
        let kept = filter_static(&residual, Some(&mask), &params(), 1.0);
        assert_eq!(kept, vec![1, 3]);
    }

    #[test]
    fn filter_static_idempotent() {
        let mut rng = derive_rng(5, &[1]);
        let residual: Vec<FlowVector> = (0..200)
            .map(|_| FlowVector::new(rng.random_range(0.0..2.0), 0.0, 0.0))
            .collect();
        let once = filter_static(&residual, None, &params(), 1.0);
        let sub: Vec<FlowVector> = once.iter().map(|&i| residual[i]).collect();
        let twice = filter_static(&sub, None, &params(), 1.0);
        assert_eq!(twice.len(), once.len());
    }

    #[test]
    fn filter_static_uniform_speeds_keep_half() {
        let mut rng = derive_rng(11, &[2]);
        let n = 2000;
        let residual: Vec<FlowVector> = (0..n)
            .map(|_| FlowVector::new(rng.random_range(0.0..2.0), 0.0, 0.0))
            .collect();
        let kept = filter_static(&residual, None, &params(), 1.0).len();
        // Binomial(2000, 0.5): a 4-sigma band is about +-90.
        assert!((kept as f64 - 1000.0).abs() < 100.0, "kept {kept}");
    }

    fn blob(
        center: (f64, f64, f64),
        flow: (f64, f64, f64),
        n: usize,
        spread: f64,
        seed: u64,
    ) -> (Vec<Point3>, Vec<FlowVector>) {
        let mut rng = derive_rng(seed, &[0xb0]);
        let pts = (0..n)
            .map(|_| {
                Point3::new(
                    center.0 + rng.random_range(-spread..spread),
                    center.1 + rng.random_range(-spread..spread),
                    center.2 + rng.random_range(-spread..spread),
                )
            })
            .collect();
        let flows = (0..n)
            .map(|_| FlowVector::new(flow.0, flow.1, flow.2))
            .collect();
        (pts, flows)
    }

    #[test]
    fn cluster_6d_separates_distant_groups() {
        let (mut pts, mut flows) = blob((0.0, 0.0, 0.0), (2.0, 0.0, 0.0), 20, 0.3, 1);
        let (p2, f2) = blob((10.0, 0.0, 0.0), (2.0, 0.0, 0.0), 20, 0.3, 2);
        pts.extend(p2);
        flows.extend(f2);
        let clusters = cluster_6d(&pts, &flows, &params());
        assert_eq!(clusters.len(), 2);
        assert_eq!(clusters[0].len(), 20);
        assert_eq!(clusters[1].len(), 20);
    }

    #[test]
    fn cluster_6d_splits_colocated_groups_by_flow() {
        // Same location, opposite 3 m/frame flows: flow distance 6 > eps.
        let (mut pts, mut flows) = blob((0.0, 0.0, 0.0), (3.0, 0.0, 0.0), 20, 0.3, 3);
        let (p2, f2) = blob((0.0, 0.0, 0.0), (-3.0, 0.0, 0.0), 20, 0.3, 4);
        pts.extend(p2);
        flows.extend(f2);
        let clusters = cluster_6d(&pts, &flows, &params());
        assert_eq!(clusters.len(), 2);
        for c in &clusters {
            let first_sign = flows[c[0]].dx.signum();
            assert!(c.iter().all(|&i| flows[i].dx.signum() == first_sign));
        }
    }

    #[test]
    fn cluster_6d_below_min_pts_is_noise() {
        // 4 mutually close points, min_pts = 5: all noise.
        let (pts, flows) = blob((0.0, 0.0, 0.0), (2.0, 0.0, 0.0), 4, 0.1, 5);
        assert!(cluster_6d(&pts, &flows, &params()).is_empty());
    }

    #[test]
    fn cluster_6d_empty_input() {
        assert!(cluster_6d(&[], &[], &params()).is_empty());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn cluster_6d_invariant_to_point_order(seed in 0u64..500) {
            let (mut pts, mut flows) = blob((0.0, 0.0, 0.0), (2.0, 0.0, 0.0), 25, 0.8, seed);
            let (p2, f2) = blob((6.0, 2.0, 0.0), (0.0, -2.0, 0.0), 25, 0.8, seed + 1000);
            pts.extend(p2);
            flows.extend(f2);
            let base = cluster_6d(&pts, &flows, &params());

            // Reverse the input order and map the clusters back.
            let n = pts.len();
            let rev_pts: Vec<Point3> = pts.iter().rev().copied().collect();
            let rev_flows: Vec<FlowVector> = flows.iter().rev().copied().collect();
            let rev = cluster_6d(&rev_pts, &rev_flows, &params());
            let mut mapped: Vec<Vec<usize>> = rev
                .iter()
                .map(|c| {
                    let mut m: Vec<usize> = c.iter().map(|&i| n - 1 - i).collect();
                    m.sort_unstable();
                    m
                })
                .collect();
            mapped.sort_by_key(|c| c[0]);

            // Only border points may move between clusters under permutation,
            // so compare cluster-size multisets and the clustered-point set.
            let sizes = |cs: &Vec<Vec<usize>>| {
                let mut s: Vec<usize> = cs.iter().map(|c| c.len()).collect();
                s.sort_unstable();
                s
            };
            prop_assert_eq!(sizes(&base), sizes(&mapped));
            let union = |cs: &Vec<Vec<usize>>| {
                let mut u: Vec<usize> = cs.iter().flatten().copied().collect();
                u.sort_unstable();
                u
            };
            prop_assert_eq!(union(&base), union(&mapped));
        }

        #[test]
        fn fitted_box_covers_cluster(seed in 0u64..500) {
            let (pts, flows) = blob((3.0, -2.0, 0.5), (1.5, 0.7, 0.0), 30, 0.9, seed);
            let fitted = fit_box(&pts, &flows).unwrap();
            let inflated = fitted.bbox.inflated(1e-6);
            let inside = pts.iter().filter(|p| inflated.contains(p)).count();
            prop_assert!(inside as f64 >= 0.95 * pts.len() as f64);
        }
    }

    #[test]
    fn fit_box_axis_aligned_shell() {
        // 2 x 1 x 1 shell moving along +x.
        let mut pts = Vec::new();
        for i in 0..=4 {
            for j in 0..=2 {
                let x = -1.0 + i as f64 * 0.5;
                let y = -0.5 + j as f64 * 0.5;
                pts.push(Point3::new(x, y, 0.0));
                pts.push(Point3::new(x, y, 1.0));
            }
        }
        let flows = vec![FlowVector::new(1.5, 0.0, 0.0); pts.len()];
        let fitted = fit_box(&pts, &flows).unwrap();
        assert!(fitted.heading_from_flow);
        let b = fitted.bbox;
        assert!((b.length - 2.0).abs() < 1e-9);
        assert!((b.width - 1.0).abs() < 1e-9);
        assert!((b.height - 1.0).abs() < 1e-9);
        assert!(b.heading.abs() < 1e-9);
        assert_eq!(b.confidence, 1.0);
    }

    #[test]
    fn fit_box_rotated_actor_from_synth_world() {
        let heading = 30.0f64.to_radians();
        let spec = WorldSpec {
            seed: 9,
            actors: vec![ActorSpec {
                size: (4.0, 2.0, 1.5),
                trajectory: Trajectory {
                    start_x: 10.0,
                    start_y: 5.0,
                    start_heading: heading,
                    segments: vec![ArcSegment {
                        curvature: 0.0,
                        speed: 30.0,
                        frames: 3,
                    }],
                },
                spawn_frame: 0,
                despawn_frame: 3,
                movable_but_static: false,
            }],
            ego: Trajectory::stationary(0.0, 0.0, 0.0),
            background_density_per_m2: 0.0,
            ground_density_per_m2: 0.0,
            emit_ground_mask: false,
            points_per_actor_surface: 60.0,
            noise_sigma: 0.0,
            frame_count: 3,
            frame_interval_s: 0.1,
            world_half_extent: 40.0,
        };
        let world = synth::generate(&spec).unwrap();
        let frame = &world.frames[0];
        let residual = residual_flow(frame).unwrap();
        let fitted = fit_box(&frame.points, &residual).unwrap();
        let b = fitted.bbox;
        assert!(
            (b.heading - heading).abs() < 2.0f64.to_radians(),
            "heading {} vs {}",
            b.heading,
            heading
        );
        assert!((b.length - 4.0).abs() < 0.15);
        assert!((b.width - 2.0).abs() < 0.15);
        assert!((b.height - 1.5).abs() < 0.15);
        assert_eq!(b.confidence, 1.0);
    }

    #[test]
    fn fit_box_zero_flow_falls_back_to_min_area_rect() {
        let mut pts = Vec::new();
        let heading = 0.4f64;
        let (s, c) = heading.sin_cos();
        for i in 0..=8 {
            for j in 0..=2 {
                let u = -2.0 + i as f64 * 0.5;
                let v = -0.5 + j as f64 * 0.5;
                pts.push(Point3::new(c * u - s * v, s * u + c * v, 0.3));
            }
        }
        let flows = vec![FlowVector::zero(); pts.len()];
        let fitted = fit_box(&pts, &flows).unwrap();
        assert!(!fitted.heading_from_flow);
        let diff = wrap_angle(fitted.bbox.heading - heading).abs();
        // The rectangle axis is heading-ambiguous by pi.
        let axis_diff = diff.min((std::f64::consts::PI - diff).abs());
        assert!(axis_diff < 1e-6, "axis off by {axis_diff}");
        assert!((fitted.bbox.length - 4.0).abs() < 1e-6);
    }

    #[test]
    fn discard_rules_match_thresholds() {
        let mk = |l: f64, w: f64, h: f64| FittedBox {
            bbox: Box3d::new(Point3::new(0.0, 0.0, 0.0), l, w, h, 0.0, 1.0).unwrap(),
            heading_from_flow: true,
        };
        // aspect 4.5 > 4.0: removed
        assert!(discard_degenerate(vec![mk(4.5, 1.0, 1.0)], &params()).is_empty());
        // area 0.25 < 0.35: removed
        assert!(discard_degenerate(vec![mk(0.5, 0.5, 1.0)], &params()).is_empty());
        // volume 0.45 < 0.5: removed
        assert!(discard_degenerate(vec![mk(1.0, 0.9, 0.5)], &params()).is_empty());
        // all tests pass: kept
        assert_eq!(discard_degenerate(vec![mk(4.0, 2.0, 1.5)], &params()).len(), 1);
    }

    #[test]
    fn mine_frame_finds_each_separated_actor() {
        let mk_actor = |x: f64, y: f64, heading: f64| ActorSpec {
            size: (4.0, 2.0, 1.5),
            trajectory: Trajectory::straight(x, y, heading, 20.0, 6),
            spawn_frame: 0,
            despawn_frame: 6,
            movable_but_static: false,
        };
        let spec = WorldSpec {
            seed: 21,
            actors: vec![
                mk_actor(10.0, 0.0, 0.0),
                mk_actor(-10.0, 8.0, 1.2),
                mk_actor(0.0, -15.0, -2.0),
            ],
            ego: Trajectory::straight(0.0, 0.0, 0.0, 2.0, 6),
            background_density_per_m2: 0.05,
            ground_density_per_m2: 0.2,
            emit_ground_mask: true,
            points_per_actor_surface: 8.0,
            noise_sigma: 0.0,
            frame_count: 6,
            frame_interval_s: 0.1,
            world_half_extent: 40.0,
        };
        let world = synth::generate(&spec).unwrap();
        for frame in &world.frames {
            let boxes = mine_frame(frame, &params(), spec.frame_interval_s, spec.seed).unwrap();
            assert_eq!(boxes.len(), 3, "frame {}", frame.timestamp_index);
        }
    }

    #[test]
    fn ground_fallback_masks_plane_points() {
        let mut pts = Vec::new();
        let mut rng = derive_rng(17, &[0xfa]);
        for _ in 0..400 {
            pts.push(Point3::new(
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
                rng.random_range(-0.02..0.02),
            ));
        }
        for _ in 0..60 {
            pts.push(Point3::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(1.0..2.0),
            ));
        }
        let mask = estimate_ground_mask(&pts, 0.25, 5);
        let ground_hits = mask[..400].iter().filter(|&&g| g).count();
        let object_hits = mask[400..].iter().filter(|&&g| g).count();
        assert!(ground_hits > 390, "ground detected: {ground_hits}/400");
        assert_eq!(object_hits, 0);
    }
}
