//! Detection metrics: rotated-box IoU in BEV and 3D, average precision with
//! confidence-ordered greedy matching, orientation error on true positives,
//! and precision/recall curves with optional minimum-value clipping.
//!
//! Matching semantics, pinned here and verified against a brute-force oracle
//! in the acceptance suite: predictions are visited in descending confidence
//! (ties keep input order); each prediction greedily claims the unmatched
//! ground-truth box with the highest IoU at or above the threshold within
//! its frame. AP integrates the raw precision-recall curve trapezoidally
//! over recall from an anchor at (recall 0, precision 1). When a minimum
//! precision/recall clip is set, curve points below either minimum are
//! zeroed before integration, so a detector whose whole curve sits below the
//! clips scores exactly 0.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::geom::{polygon_area, wrap_angle, Box3d, RigidTransform};
use crate::io::BoxRecord;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IouSpace {
    Bev,
    ThreeD,
}

impl std::fmt::Display for IouSpace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            IouSpace::Bev => write!(f, "bev"),
            IouSpace::ThreeD => write!(f, "3d"),
        }
    }
}

/// Axis-aligned BEV rectangle centered on the ego vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRegion {
    pub size_x: f64,
    pub size_y: f64,
}

impl EvalRegion {
    pub fn contains(&self, b: &Box3d) -> bool {
        b.center.x.abs() <= self.size_x / 2.0 && b.center.y.abs() <= self.size_y / 2.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    pub iou_space: IouSpace,
    pub eval_region: Option<EvalRegion>,
    /// nuScenes-style minimum precision/recall; points below either value
    /// are discarded before integration.
    pub min_pr_clip: Option<f64>,
    /// Ground-truth speed above which an object counts as moving, m/s.
    pub motion_split_threshold: f64,
    /// Crop only predictions to the region, keeping all ground truth.
    pub crop_predictions_only: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_thresholds: vec![0.3, 0.5],
            iou_space: IouSpace::Bev,
            eval_region: Some(EvalRegion {
                size_x: 100.0,
                size_y: 100.0,
            }),
            min_pr_clip: None,
            motion_split_threshold: 1.0,
            crop_predictions_only: false,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iou_thresholds.is_empty() {
            return Err(Error::InvalidParam("need at least one IoU threshold".into()));
        }
        for t in &self.iou_thresholds {
            if !(t.is_finite() && *t > 0.0 && *t < 1.0) {
                return Err(Error::InvalidParam(format!(
                    "IoU thresholds must lie in (0, 1), got {t}"
                )));
            }
        }
        if let Some(r) = &self.eval_region {
            if !(r.size_x > 0.0 && r.size_y > 0.0) {
                return Err(Error::InvalidParam("eval region must be non-degenerate".into()));
            }
        }
        if let Some(c) = self.min_pr_clip {
            if !(0.0..1.0).contains(&c) {
                return Err(Error::InvalidParam(format!(
                    "min_pr_clip must be in [0, 1), got {c}"
                )));
            }
        }
        Ok(())
    }
}

/// Sutherland-Hodgman clip of a convex subject polygon by a convex clip
/// polygon (both counter-clockwise).
fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output: Vec<[f64; 2]> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            return output;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        let inside = |p: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= 0.0;
        let intersect = |p: [f64; 2], q: [f64; 2]| -> [f64; 2] {
            let dx = q[0] - p[0];
            let dy = q[1] - p[1];
            let denom = (b[0] - a[0]) * dy - (b[1] - a[1]) * dx;
            if denom.abs() < 1e-18 {
                return q;
            }
            let t = -((b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])) / denom;
            [p[0] + t * dx, p[1] + t * dy]
        };
        for j in 0..input.len() {
            let current = input[j];
            let next = input[(j + 1) % input.len()];
            let cur_in = inside(current);
            let next_in = inside(next);
            if cur_in {
                output.push(current);
                if !next_in {
                    output.push(intersect(current, next));
                }
            } else if next_in {
                output.push(intersect(current, next));
            }
        }
    }
    output
}

/// Intersection area of two boxes' BEV rectangles.
pub fn intersection_area_bev(a: &Box3d, b: &Box3d) -> f64 {
    let poly = clip_convex(&a.corners_bev(), &b.corners_bev());
    polygon_area(&poly).max(0.0)
}

/// BEV IoU of two oriented boxes via convex polygon clipping.
pub fn iou_bev(a: &Box3d, b: &Box3d) -> f64 {
    let inter = intersection_area_bev(a, b);
    let union = a.area_bev() + b.area_bev() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// 3D IoU for yaw-only boxes: BEV intersection area times vertical overlap.
pub fn iou_3d(a: &Box3d, b: &Box3d) -> f64 {
    let inter_bev = intersection_area_bev(a, b);
    let (a_lo, a_hi) = a.z_range();
    let (b_lo, b_hi) = b.z_range();
    let dz = (a_hi.min(b_hi) - a_lo.max(b_lo)).max(0.0);
    let inter = inter_bev * dz;
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

pub fn iou(a: &Box3d, b: &Box3d, space: IouSpace) -> f64 {
    match space {
        IouSpace::Bev => iou_bev(a, b),
        IouSpace::ThreeD => iou_3d(a, b),
    }
}

/// One operating point of the precision-recall curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub confidence: f64,
    pub tp: usize,
    pub fp: usize,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApResult {
    pub ap: f64,
    /// Mean absolute heading error of true positives, 2pi-periodic minimal
    /// difference in [0, pi]. None without true positives.
    pub aoe: Option<f64>,
    /// Axis-symmetric variant treating theta and theta+pi as equal, in
    /// [0, pi/2].
    pub aoe_axis: Option<f64>,
    pub pr_curve: Vec<PrPoint>,
    pub total_gt: usize,
    pub tp: usize,
    pub fp: usize,
}

fn region_filter(records: &[BoxRecord], region: Option<&EvalRegion>) -> Vec<BoxRecord> {
    match region {
        None => records.to_vec(),
        Some(r) => records.iter().filter(|b| r.contains(&b.bbox)).copied().collect(),
    }
}

/// Average precision at one IoU threshold, plus the PR curve and the
/// orientation error over true positives.
pub fn average_precision(
    preds: &[BoxRecord],
    gts: &[BoxRecord],
    iou_threshold: f64,
    config: &EvalConfig,
) -> Result<ApResult> {
    average_precision_with_ignores(preds, gts, &[], iou_threshold, config)
}

/// Split evaluation: predictions that miss the split's ground truth but
/// overlap an ignored box (the other split) count neither as true nor as
/// false positives. This is the standard per-split protocol.
pub fn average_precision_with_ignores(
    preds: &[BoxRecord],
    gts: &[BoxRecord],
    ignore_gts: &[BoxRecord],
    iou_threshold: f64,
    config: &EvalConfig,
) -> Result<ApResult> {
    config.validate()?;
    if !(iou_threshold > 0.0 && iou_threshold < 1.0) {
        return Err(Error::InvalidParam(format!(
            "IoU threshold must lie in (0, 1), got {iou_threshold}"
        )));
    }
    let preds = region_filter(preds, config.eval_region.as_ref());
    let gts = if config.crop_predictions_only {
        gts.to_vec()
    } else {
        region_filter(gts, config.eval_region.as_ref())
    };

    let mut gt_by_frame: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, g) in gts.iter().enumerate() {
        gt_by_frame.entry(g.frame_index).or_default().push(i);
    }
    let mut ignore_by_frame: HashMap<usize, Vec<&BoxRecord>> = HashMap::new();
    for g in ignore_gts {
        ignore_by_frame.entry(g.frame_index).or_default().push(g);
    }
    let total_gt = gts.len();

    // Descending confidence; stable sort keeps input order on ties.
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b]
            .bbox
            .confidence
            .partial_cmp(&preds[a].bbox.confidence)
            .unwrap()
    });

    let mut gt_matched = vec![false; gts.len()];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut pr_curve = Vec::with_capacity(preds.len());
    let mut heading_errors: Vec<f64> = Vec::new();

    for &p_idx in &order {
        let pred = &preds[p_idx];
        let mut best: Option<(f64, usize)> = None;
        if let Some(frame_gts) = gt_by_frame.get(&pred.frame_index) {
            for &g_idx in frame_gts {
                if gt_matched[g_idx] {
                    continue;
                }
                let v = iou(&pred.bbox, &gts[g_idx].bbox, config.iou_space);
                if v >= iou_threshold {
                    let better = match best {
                        None => true,
                        Some((best_v, _)) => v > best_v,
                    };
                    if better {
                        best = Some((v, g_idx));
                    }
                }
            }
        }
        match best {
            Some((_, g_idx)) => {
                gt_matched[g_idx] = true;
                tp += 1;
                heading_errors.push(wrap_angle(pred.bbox.heading - gts[g_idx].bbox.heading).abs());
            }
            None => {
                // Out-of-split hits are neither right nor wrong here.
                let ignored = ignore_by_frame
                    .get(&pred.frame_index)
                    .map(|igs| {
                        igs.iter()
                            .any(|g| iou(&pred.bbox, &g.bbox, config.iou_space) >= iou_threshold)
                    })
                    .unwrap_or(false);
                if ignored {
                    continue;
                }
                fp += 1;
            }
        }
        pr_curve.push(PrPoint {
            confidence: pred.bbox.confidence,
            tp,
            fp,
            precision: tp as f64 / (tp + fp) as f64,
            recall: if total_gt == 0 {
                0.0
            } else {
                tp as f64 / total_gt as f64
            },
        });
    }

    let ap = integrate_pr(&pr_curve, config.min_pr_clip);
    let aoe = if heading_errors.is_empty() {
        None
    } else {
        Some(heading_errors.iter().sum::<f64>() / heading_errors.len() as f64)
    };
    let aoe_axis = if heading_errors.is_empty() {
        None
    } else {
        Some(
            heading_errors
                .iter()
                .map(|e| e.min(std::f64::consts::PI - e))
                .sum::<f64>()
                / heading_errors.len() as f64,
        )
    };
    Ok(ApResult {
        ap,
        aoe,
        aoe_axis,
        pr_curve,
        total_gt,
        tp,
        fp,
    })
}

/// Trapezoidal area under the PR curve over recall, anchored at
/// (recall 0, precision 1). With a clip, points below either minimum are
/// zeroed first (the anchor included, since its recall is 0).
fn integrate_pr(curve: &[PrPoint], min_pr_clip: Option<f64>) -> f64 {
    let clipped = |p: f64, r: f64| -> f64 {
        match min_pr_clip {
            Some(clip) if p < clip || r < clip => 0.0,
            _ => p,
        }
    };
    let mut prev_r = 0.0;
    let mut prev_p = clipped(1.0, 0.0);
    let mut area = 0.0;
    for pt in curve {
        let p = clipped(pt.precision, pt.recall);
        area += (pt.recall - prev_r) * (p + prev_p) / 2.0;
        prev_r = pt.recall;
        prev_p = p;
    }
    area
}

/// Ground truth partitioned by motion state.
#[derive(Debug, Clone, PartialEq)]
pub enum MotionSplit {
    Split {
        moving: Vec<BoxRecord>,
        still: Vec<BoxRecord>,
    },
    /// Velocities unavailable: everything stays in one movable pool.
    Movable(Vec<BoxRecord>),
}

/// Splits ground truth into moving and still sets by world speed; strictly
/// faster than the threshold counts as moving. Records without a speed
/// entry, or a missing speed table, leave the pool unsplit.
pub fn split_moving_still(
    gts: &[BoxRecord],
    speeds: Option<&HashMap<(usize, u64), f64>>,
    threshold: f64,
) -> MotionSplit {
    let speeds = match speeds {
        Some(s) => s,
        None => {
            eprintln!("motion split unavailable: no ground-truth velocities; treating all as movable");
            return MotionSplit::Movable(gts.to_vec());
        }
    };
    let mut moving = Vec::new();
    let mut still = Vec::new();
    for g in gts {
        let speed = g.track_id.and_then(|id| speeds.get(&(g.frame_index, id)));
        match speed {
            Some(&v) if v > threshold => moving.push(*g),
            Some(_) => still.push(*g),
            None => {
                eprintln!(
                    "motion split unavailable for frame {} track {:?}; treating all as movable",
                    g.frame_index, g.track_id
                );
                return MotionSplit::Movable(gts.to_vec());
            }
        }
    }
    MotionSplit::Split { moving, still }
}

/// World-frame speed per (frame, track) from consecutive boxes of the same
/// track: forward difference, with the last entry reusing the previous
/// interval's speed.
pub fn track_speeds(
    records: &[BoxRecord],
    poses: &[RigidTransform],
    frame_interval_s: f64,
) -> HashMap<(usize, u64), f64> {
    let mut by_track: HashMap<u64, Vec<&BoxRecord>> = HashMap::new();
    for r in records {
        if let Some(id) = r.track_id {
            by_track.entry(id).or_default().push(r);
        }
    }
    let mut speeds = HashMap::new();
    for (id, mut rs) in by_track {
        rs.sort_by_key(|r| r.frame_index);
        for i in 0..rs.len() {
            let (a, b) = if i + 1 < rs.len() {
                (rs[i], rs[i + 1])
            } else if rs.len() >= 2 {
                (rs[i - 1], rs[i])
            } else {
                speeds.insert((rs[i].frame_index, id), 0.0);
                continue;
            };
            let pa = poses[a.frame_index].apply(&a.bbox.center);
            let pb = poses[b.frame_index].apply(&b.bbox.center);
            let dt = (b.frame_index - a.frame_index) as f64 * frame_interval_s;
            let speed = if dt > 0.0 { pa.dist(&pb) / dt } else { 0.0 };
            speeds.insert((rs[i].frame_index, id), speed);
        }
    }
    speeds
}

/// One line per threshold (and per motion split when available), written as
/// stable key=value pairs.
pub fn format_report(
    results: &[(f64, Option<&str>, ApResult)],
    config: &EvalConfig,
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# detection evaluation");
    let _ = writeln!(out, "iou_space={}", config.iou_space);
    if let Some(r) = &config.eval_region {
        let _ = writeln!(out, "region={}x{}", r.size_x, r.size_y);
    }
    if let Some(c) = config.min_pr_clip {
        let _ = writeln!(out, "min_pr_clip={c}");
    }
    for (threshold, split, res) in results {
        let split_part = match split {
            Some(s) => format!(" split={s}"),
            None => String::new(),
        };
        let aoe_part = match (res.aoe, res.aoe_axis) {
            (Some(aoe), Some(axis)) => format!(" aoe={aoe:.6} aoe_axis={axis:.6}"),
            _ => " aoe=nan aoe_axis=nan".to_string(),
        };
        let _ = writeln!(
            out,
            "threshold={threshold}{split_part} ap={:.6} tp={} fp={} gt={}{aoe_part}",
            res.ap, res.tp, res.fp, res.total_gt
        );
    }
    out
}

/// CSV of the PR curves: one row per operating point per threshold.
pub fn write_pr_csv(results: &[(f64, ApResult)], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("threshold,confidence,tp,fp,precision,recall\n");
    for (threshold, res) in results {
        for pt in &res.pr_curve {
            let _ = writeln!(
                out,
                "{threshold},{},{},{},{},{}",
                pt.confidence, pt.tp, pt.fp, pt.precision, pt.recall
            );
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}
