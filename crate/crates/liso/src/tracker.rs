//! Flow-based greedy tracker in a world-fixed frame.
//!
//! Ego steps are accumulated from frame 0, so matching happens in a fixed
//! coordinate system and box motion is actual object motion. Candidate boxes
//! are propagated one step using the mean world displacement of the points
//! inside them (residual flow plus ego compensation), matched greedily by
//! center distance, coasted for a bounded number of steps when unmatched, and
//! terminated after that. Tracking runs forward and reverse; tracklets from
//! the two passes that share a source detection are joined into tracks, which
//! are then post-filtered by length and median confidence.
//!
//! Member flow is looked up from the points inside the (slightly inflated)
//! box in both initial and regeneration tracking; mined boxes cover their
//! cluster, so the lookup recovers the cluster flow without needing cluster
//! membership to survive serialization.

use std::collections::HashMap;

use crate::geom::{accumulate_poses, wrap_angle, Box3d, Point3, PointFrame, RigidTransform};
use crate::io::BoxRecord;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerParams {
    /// Greedy matching gate on box-center distance, meters.
    pub match_max_dist: f64,
    /// Unmatched tracklets are propagated for this many steps, then dropped.
    pub coast_steps: usize,
    /// Tracks shorter than this many time steps are discarded.
    pub min_track_len: usize,
    /// Tracks with a median box confidence below this are discarded.
    pub min_median_conf: f64,
}

impl Default for TrackerParams {
    fn default() -> Self {
        TrackerParams {
            match_max_dist: 1.5,
            coast_steps: 1,
            min_track_len: 4,
            min_median_conf: 0.3,
        }
    }
}

impl TrackerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.match_max_dist.is_finite() && self.match_max_dist > 0.0) {
            return Err(Error::InvalidParam(format!(
                "match_max_dist must be positive, got {}",
                self.match_max_dist
            )));
        }
        if self.min_track_len == 0 {
            return Err(Error::InvalidParam("min_track_len must be positive".into()));
        }
        if !(self.min_median_conf.is_finite() && self.min_median_conf > 0.0) {
            return Err(Error::InvalidParam(format!(
                "min_median_conf must be positive, got {}",
                self.min_median_conf
            )));
        }
        Ok(())
    }
}

/// Which pipeline pass the tracker is running in. Initial mining emits
/// confidence-1 boxes, so only the length post-filter can fire there; during
/// regeneration the confidences come from the detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackingMode {
    Initial,
    Regeneration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackDirection {
    Forward,
    Reverse,
}

/// One time step of a track, in per-frame ego coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackEntry {
    pub frame_index: usize,
    pub bbox: Box3d,
    /// False for coasted (predicted but unobserved) entries.
    pub observed: bool,
}

/// A time-indexed box sequence with identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub track_id: u64,
    pub entries: Vec<TrackEntry>,
}

impl Track {
    /// Frame indices strictly increase by one and unobserved runs stay
    /// within the coast budget.
    pub fn validate(&self, coast_steps: usize) -> Result<()> {
        let mut run = 0usize;
        for (i, e) in self.entries.iter().enumerate() {
            if i > 0 && e.frame_index != self.entries[i - 1].frame_index + 1 {
                return Err(Error::InvalidParam(format!(
                    "track {} has a frame gap at {}",
                    self.track_id, e.frame_index
                )));
            }
            if e.observed {
                run = 0;
            } else {
                run += 1;
                if run > coast_steps {
                    return Err(Error::InvalidParam(format!(
                        "track {} exceeds the coast budget at frame {}",
                        self.track_id, e.frame_index
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn observed_entries(&self) -> impl Iterator<Item = &TrackEntry> {
        self.entries.iter().filter(|e| e.observed)
    }

    /// Median confidence over observed entries (averaging the middle pair).
    pub fn median_confidence(&self) -> f64 {
        let mut confs: Vec<f64> = self.observed_entries().map(|e| e.bbox.confidence).collect();
        if confs.is_empty() {
            return 0.0;
        }
        confs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = confs.len();
        if n % 2 == 1 {
            confs[n / 2]
        } else {
            (confs[n / 2 - 1] + confs[n / 2]) / 2.0
        }
    }
}

/// One tracker-pass entry in world coordinates, carrying the identity of the
/// detection it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackletEntry {
    pub frame_index: usize,
    pub bbox_world: Box3d,
    pub observed: bool,
    /// (frame_index, detection index) of the source detection.
    pub source: Option<(usize, usize)>,
}

/// Output of a single forward or reverse pass, before joining.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    pub entries: Vec<TrackletEntry>,
}

/// Predicted world box one step ahead: center shifted by the member
/// displacement, heading following the motion direction when moving, size
/// and confidence unchanged.
pub fn propagate_world(bbox: &Box3d, world_disp: [f64; 3]) -> Box3d {
    let speed_bev = (world_disp[0] * world_disp[0] + world_disp[1] * world_disp[1]).sqrt();
    let heading = if speed_bev > 0.05 {
        wrap_angle(world_disp[1].atan2(world_disp[0]))
    } else {
        bbox.heading
    };
    Box3d {
        center: Point3::new(
            bbox.center.x + world_disp[0],
            bbox.center.y + world_disp[1],
            bbox.center.z + world_disp[2],
        ),
        heading,
        ..*bbox
    }
}

/// Spec-shaped single-box propagation in per-frame ego coordinates: the
/// predicted box at t+1 (in the t+1 frame) from the box at t, its member
/// residual flow, and the ego step.
pub fn propagate(bbox: &Box3d, member_residual: &[crate::geom::FlowVector], pose_to_next: &RigidTransform) -> Box3d {
    let inv = pose_to_next.inverse();
    let carried = inv.apply(&bbox.center);
    let n = member_residual.len().max(1) as f64;
    let mean = member_residual.iter().fold([0.0f64; 3], |acc, f| {
        [acc[0] + f.dx / n, acc[1] + f.dy / n, acc[2] + f.dz / n]
    });
    let center = Point3::new(carried.x + mean[0], carried.y + mean[1], carried.z + mean[2]);
    let carried_heading = wrap_angle(bbox.heading + inv.yaw());
    let speed_bev = (mean[0] * mean[0] + mean[1] * mean[1]).sqrt();
    let heading = if speed_bev > 0.05 {
        // Flow direction, rotated into the next frame.
        let rotated = inv.apply_vector(&crate::geom::FlowVector::new(mean[0], mean[1], mean[2]));
        wrap_angle(rotated.dy.atan2(rotated.dx))
    } else {
        carried_heading
    };
    Box3d {
        center,
        heading,
        ..*bbox
    }
}

/// Greedy matching by ascending center distance with a hard gate.
///
/// Pairs are visited in ascending (distance, predicted index, detected index)
/// order; a pair is accepted iff both sides are still unmatched and the
/// distance is within `max_dist`. Deterministic and injective by
/// construction.
pub struct MatchResult {
    /// (predicted index, detected index) accepted pairs.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_predicted: Vec<usize>,
    pub unmatched_detected: Vec<usize>,
}

pub fn match_greedy(predicted: &[Box3d], detected: &[Box3d], max_dist: f64) -> MatchResult {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in predicted.iter().enumerate() {
        for (j, d) in detected.iter().enumerate() {
            let dist = p.center.dist(&d.center);
            if dist <= max_dist {
                candidates.push((dist, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut pred_used = vec![false; predicted.len()];
    let mut det_used = vec![false; detected.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if !pred_used[i] && !det_used[j] {
            pred_used[i] = true;
            det_used[j] = true;
            pairs.push((i, j));
        }
    }
    pairs.sort_unstable();
    MatchResult {
        pairs,
        unmatched_predicted: (0..predicted.len()).filter(|&i| !pred_used[i]).collect(),
        unmatched_detected: (0..detected.len()).filter(|&j| !det_used[j]).collect(),
    }
}

/// Everything a tracking pass needs about one frame, precomputed once.
struct FrameContext {
    /// Candidate boxes in world coordinates.
    world_boxes: Vec<Box3d>,
    /// Mean world displacement (over the ego step at this frame) of the
    /// points inside each candidate; None when no points fall inside.
    world_disp: Vec<Option<[f64; 3]>>,
}

/// Margin added around a box when gathering its member points.
const FLOW_LOOKUP_INFLATION: f64 = 0.1;

fn build_contexts(
    frames: &[PointFrame],
    candidates: &[Vec<Box3d>],
    poses: &[RigidTransform],
) -> Result<Vec<FrameContext>> {
    let mut contexts = Vec::with_capacity(frames.len());
    for (t, frame) in frames.iter().enumerate() {
        let world_from_ego = &poses[t];
        let yaw = world_from_ego.yaw();
        let world_boxes: Vec<Box3d> = candidates[t]
            .iter()
            .map(|b| Box3d {
                center: world_from_ego.apply(&b.center),
                heading: wrap_angle(b.heading + yaw),
                ..*b
            })
            .collect();

        // Per-point world displacement over [t, t+1], where flow is present.
        let mut world_disp = vec![None; candidates[t].len()];
        if let (Some(_), Some(pose_to_next)) = (&frame.flow, &frame.pose_to_next) {
            let residual = crate::cluster::residual_flow(frame)?;
            let rot_next = world_from_ego.compose(pose_to_next);
            for (b_idx, bbox) in candidates[t].iter().enumerate() {
                let inflated = bbox.inflated(FLOW_LOOKUP_INFLATION);
                let mut sum = [0.0f64; 3];
                let mut count = 0usize;
                for (p, r) in frame.points.iter().zip(&residual) {
                    if inflated.contains(p) {
                        // World displacement of a member point is its residual
                        // flow rotated into world orientation at t+1.
                        let w = rot_next.apply_vector(&crate::geom::FlowVector::new(r.dx, r.dy, r.dz));
                        sum[0] += w.dx;
                        sum[1] += w.dy;
                        sum[2] += w.dz;
                        count += 1;
                    }
                }
                if count > 0 {
                    let n = count as f64;
                    world_disp[b_idx] = Some([sum[0] / n, sum[1] / n, sum[2] / n]);
                }
            }
        }
        contexts.push(FrameContext {
            world_boxes,
            world_disp,
        });
    }
    Ok(contexts)
}

struct ActiveTracklet {
    entries: Vec<TrackletEntry>,
    /// Last known per-step world displacement, used for coasting and as the
    /// fallback when a box has no interior points.
    last_disp: [f64; 3],
    unobserved_run: usize,
}

impl ActiveTracklet {
    fn finalize(mut self, done: &mut Vec<Tracklet>) {
        // Trailing coasts never bridged to anything; drop them.
        while matches!(self.entries.last(), Some(e) if !e.observed) {
            self.entries.pop();
        }
        if !self.entries.is_empty() {
            done.push(Tracklet {
                entries: self.entries,
            });
        }
    }
}

/// Runs one tracking pass over the sequence.
///
/// `frames` supply flow for member lookup; `candidates` are per-frame ego
/// boxes. Unmatched detections spawn tracklets only when they are farther
/// than the gate from every propagated box, so near-duplicates of a tracked
/// object do not fork new identities.
pub fn track_sequence(
    frames: &[PointFrame],
    candidates: &[Vec<Box3d>],
    params: &TrackerParams,
    direction: TrackDirection,
) -> Result<Vec<Tracklet>> {
    params.validate()?;
    if frames.len() != candidates.len() {
        return Err(Error::LengthMismatch {
            what: "candidate frames".into(),
            path: Default::default(),
            expected: frames.len(),
            got: candidates.len(),
        });
    }
    if frames.is_empty() {
        return Ok(Vec::new());
    }
    let poses = world_poses(frames)?;
    let contexts = build_contexts(frames, candidates, &poses)?;

    let order: Vec<usize> = match direction {
        TrackDirection::Forward => (0..frames.len()).collect(),
        TrackDirection::Reverse => (0..frames.len()).rev().collect(),
    };
    let sign = match direction {
        TrackDirection::Forward => 1.0,
        TrackDirection::Reverse => -1.0,
    };

    let mut active: Vec<ActiveTracklet> = Vec::new();
    let mut done: Vec<Tracklet> = Vec::new();

    for (step, &t) in order.iter().enumerate() {
        let ctx = &contexts[t];
        if step == 0 {
            for (j, bbox) in ctx.world_boxes.iter().enumerate() {
                active.push(ActiveTracklet {
                    entries: vec![TrackletEntry {
                        frame_index: t,
                        bbox_world: *bbox,
                        observed: true,
                        source: Some((t, j)),
                    }],
                    last_disp: disp_for(ctx, j, sign).unwrap_or([0.0; 3]),
                    unobserved_run: 0,
                });
            }
            continue;
        }

        // Predict every active tracklet into this frame.
        let predicted: Vec<Box3d> = active
            .iter()
            .map(|tr| {
                let last = tr.entries.last().unwrap();
                propagate_world(&last.bbox_world, tr.last_disp)
            })
            .collect();

        let matches = match_greedy(&predicted, &ctx.world_boxes, params.match_max_dist);

        let mut next_active: Vec<ActiveTracklet> = Vec::new();
        let mut matched_of_pred: HashMap<usize, usize> = matches.pairs.iter().copied().collect();

        for (i, mut tr) in active.into_iter().enumerate() {
            if let Some(j) = matched_of_pred.remove(&i) {
                let det = ctx.world_boxes[j];
                let prev_center = tr.entries.last().unwrap().bbox_world.center;
                tr.entries.push(TrackletEntry {
                    frame_index: t,
                    bbox_world: det,
                    observed: true,
                    source: Some((t, j)),
                });
                // Prefer the frame's own flow; fall back to box-to-box motion.
                tr.last_disp = disp_for(ctx, j, sign).unwrap_or([
                    det.center.x - prev_center.x,
                    det.center.y - prev_center.y,
                    det.center.z - prev_center.z,
                ]);
                tr.unobserved_run = 0;
                next_active.push(tr);
            } else if tr.unobserved_run < params.coast_steps {
                let coasted = propagate_world(&tr.entries.last().unwrap().bbox_world, tr.last_disp);
                tr.entries.push(TrackletEntry {
                    frame_index: t,
                    bbox_world: coasted,
                    observed: false,
                    source: None,
                });
                tr.unobserved_run += 1;
                next_active.push(tr);
            } else {
                tr.finalize(&mut done);
            }
        }

        // Spawn rule: unmatched detections further than the gate from every
        // propagated box start new tracklets; losers of a nearby contest are
        // treated as duplicates and dropped.
        for &j in &matches.unmatched_detected {
            let det = &ctx.world_boxes[j];
            let near_predicted = predicted
                .iter()
                .any(|p| p.center.dist(&det.center) <= params.match_max_dist);
            if near_predicted {
                continue;
            }
            next_active.push(ActiveTracklet {
                entries: vec![TrackletEntry {
                    frame_index: t,
                    bbox_world: *det,
                    observed: true,
                    source: Some((t, j)),
                }],
                last_disp: disp_for(ctx, j, sign).unwrap_or([0.0; 3]),
                unobserved_run: 0,
            });
        }
        active = next_active;
    }
    for tr in active {
        tr.finalize(&mut done);
    }

    // Reverse passes built entries in descending frame order.
    if direction == TrackDirection::Reverse {
        for tr in &mut done {
            tr.entries.reverse();
        }
    }
    done.sort_by_key(|tr| {
        (
            tr.entries[0].frame_index,
            tr.entries[0].source.map(|s| s.1).unwrap_or(usize::MAX),
        )
    });
    Ok(done)
}

fn disp_for(ctx: &FrameContext, j: usize, sign: f64) -> Option<[f64; 3]> {
    ctx.world_disp[j].map(|d| [sign * d[0], sign * d[1], sign * d[2]])
}

/// World pose per frame accumulated from the per-frame ego steps.
pub fn world_poses(frames: &[PointFrame]) -> Result<Vec<RigidTransform>> {
    let mut steps = Vec::with_capacity(frames.len().saturating_sub(1));
    for frame in &frames[..frames.len().saturating_sub(1)] {
        steps.push(frame.pose_to_next.ok_or_else(|| {
            Error::InvalidParam(format!(
                "frame {} has no ego pose; world-fixed tracking needs poses",
                frame.timestamp_index
            ))
        })?);
    }
    Ok(accumulate_poses(&steps))
}

/// Joins forward and reverse tracklets into tracks.
///
/// Tracklets sharing any source detection merge. Entries are deduplicated by
/// frame, observed entries win over coasted ones, and forward entries win
/// observed-observed conflicts. Track ids are assigned in (first frame,
/// first source) order. Output boxes stay in world coordinates.
pub fn join_forward_reverse(forward: &[Tracklet], reverse: &[Tracklet]) -> Vec<Tracklet> {
    let all: Vec<&Tracklet> = forward.iter().chain(reverse.iter()).collect();
    let n = all.len();
    let forward_len = forward.len();

    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let mut by_source: HashMap<(usize, usize), usize> = HashMap::new();
    for (idx, tr) in all.iter().enumerate() {
        for e in &tr.entries {
            if let Some(src) = e.source {
                match by_source.entry(src) {
                    std::collections::hash_map::Entry::Vacant(v) => {
                        v.insert(idx);
                    }
                    std::collections::hash_map::Entry::Occupied(o) => {
                        let (ri, rj) = (find(&mut parent, *o.get()), find(&mut parent, idx));
                        if ri != rj {
                            parent[ri.max(rj)] = ri.min(rj);
                        }
                    }
                }
            }
        }
    }

    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }

    let mut merged: Vec<Tracklet> = Vec::new();
    for (_, group) in groups {
        // frame -> best entry; observed beats coasted, forward beats reverse.
        let mut per_frame: HashMap<usize, (usize, TrackletEntry)> = HashMap::new();
        for &idx in &group {
            let rank = if idx < forward_len { 0usize } else { 1 };
            for e in &all[idx].entries {
                match per_frame.entry(e.frame_index) {
                    std::collections::hash_map::Entry::Vacant(v) => {
                        v.insert((rank, *e));
                    }
                    std::collections::hash_map::Entry::Occupied(mut o) => {
                        let (old_rank, old) = *o.get();
                        // Prefer observed; among equals prefer forward (rank 0).
                        let replace = match (e.observed, old.observed) {
                            (true, false) => true,
                            (false, true) => false,
                            _ => rank < old_rank,
                        };
                        if replace {
                            o.insert((rank, *e));
                        }
                    }
                }
            }
        }
        let mut entries: Vec<TrackletEntry> = per_frame.into_values().map(|(_, e)| e).collect();
        entries.sort_by_key(|e| e.frame_index);
        // Trailing or leading coasts may survive the merge; trim both ends.
        while matches!(entries.last(), Some(e) if !e.observed) {
            entries.pop();
        }
        while matches!(entries.first(), Some(e) if !e.observed) {
            entries.remove(0);
        }
        if !entries.is_empty() {
            merged.push(Tracklet { entries });
        }
    }
    merged.sort_by_key(|tr| {
        (
            tr.entries[0].frame_index,
            tr.entries[0].source.map(|s| s.1).unwrap_or(usize::MAX),
        )
    });
    merged
}

/// Converts joined world-frame tracklets into ego-frame tracks with ids,
/// backfilling coasted-entry confidence with the track's median observed
/// confidence.
pub fn tracklets_to_tracks(tracklets: &[Tracklet], poses: &[RigidTransform]) -> Vec<Track> {
    let mut tracks = Vec::with_capacity(tracklets.len());
    for (id, tr) in tracklets.iter().enumerate() {
        let mut confs: Vec<f64> = tr
            .entries
            .iter()
            .filter(|e| e.observed)
            .map(|e| e.bbox_world.confidence)
            .collect();
        confs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median_conf = if confs.is_empty() {
            0.0
        } else if confs.len() % 2 == 1 {
            confs[confs.len() / 2]
        } else {
            (confs[confs.len() / 2 - 1] + confs[confs.len() / 2]) / 2.0
        };
        let entries: Vec<TrackEntry> = tr
            .entries
            .iter()
            .map(|e| {
                let ego_from_world = poses[e.frame_index].inverse();
                let mut bbox = Box3d {
                    center: ego_from_world.apply(&e.bbox_world.center),
                    heading: wrap_angle(e.bbox_world.heading + ego_from_world.yaw()),
                    ..e.bbox_world
                };
                if !e.observed {
                    bbox.confidence = median_conf;
                }
                TrackEntry {
                    frame_index: e.frame_index,
                    bbox,
                    observed: e.observed,
                }
            })
            .collect();
        tracks.push(Track {
            track_id: id as u64,
            entries,
        });
    }
    tracks
}

/// Discards tracks shorter than the minimum length or with a median box
/// confidence below the threshold. In initial mode every confidence is 1,
/// so only the length test can fire; the mode is threaded through for
/// diagnostics.
pub fn postfilter(tracks: Vec<Track>, params: &TrackerParams, mode: TrackingMode) -> Vec<Track> {
    tracks
        .into_iter()
        .filter(|t| {
            if t.entries.len() < params.min_track_len {
                return false;
            }
            let median = t.median_confidence();
            debug_assert!(
                mode != TrackingMode::Initial || (median - 1.0).abs() < 1e-12,
                "initial mining must emit confidence-1 boxes"
            );
            median >= params.min_median_conf
        })
        .collect()
}

/// Full tracking stage: forward pass, reverse pass, join, convert to ego
/// frame, post-filter.
pub fn track_stage(
    frames: &[PointFrame],
    candidates: &[Vec<Box3d>],
    params: &TrackerParams,
    mode: TrackingMode,
) -> Result<Vec<Track>> {
    let forward = track_sequence(frames, candidates, params, TrackDirection::Forward)?;
    let reverse = track_sequence(frames, candidates, params, TrackDirection::Reverse)?;
    let joined = join_forward_reverse(&forward, &reverse);
    let poses = world_poses(frames)?;
    let tracks = tracklets_to_tracks(&joined, &poses);
    for t in &tracks {
        t.validate(params.coast_steps)?;
    }
    Ok(postfilter(tracks, params, mode))
}

/// Serializes tracks as box records (ego frame), keeping observed flags.
pub fn tracks_to_records(tracks: &[Track]) -> Vec<BoxRecord> {
    tracks
        .iter()
        .flat_map(|t| {
            t.entries.iter().map(move |e| BoxRecord {
                frame_index: e.frame_index,
                track_id: Some(t.track_id),
                bbox: e.bbox,
                is_pseudo: true,
                observed: e.observed,
            })
        })
        .collect()
}

/// Rebuilds tracks from records; every record must carry a track id.
pub fn records_to_tracks(records: &[BoxRecord]) -> Result<Vec<Track>> {
    let mut by_id: HashMap<u64, Vec<&BoxRecord>> = HashMap::new();
    for r in records {
        let id = r.track_id.ok_or_else(|| {
            Error::InvalidParam(format!(
                "record at frame {} has no track id",
                r.frame_index
            ))
        })?;
        by_id.entry(id).or_default().push(r);
    }
    let mut ids: Vec<u64> = by_id.keys().copied().collect();
    ids.sort_unstable();
    let mut tracks = Vec::with_capacity(ids.len());
    for id in ids {
        let mut rs = by_id.remove(&id).unwrap();
        rs.sort_by_key(|r| r.frame_index);
        let entries: Vec<TrackEntry> = rs
            .iter()
            .map(|r| TrackEntry {
                frame_index: r.frame_index,
                bbox: r.bbox,
                observed: r.observed,
            })
            .collect();
        for pair in entries.windows(2) {
            if pair[1].frame_index <= pair[0].frame_index {
                return Err(Error::InvalidParam(format!(
                    "track {id} has duplicate or non-increasing frames"
                )));
            }
        }
        tracks.push(Track {
            track_id: id,
            entries,
        });
    }
    Ok(tracks)
}
