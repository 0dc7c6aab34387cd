//! Self-training orchestration: maintain the pseudo ground-truth database,
//! train and query an abstract detector, regenerate labels through the
//! tracker and track optimizer, and schedule weight drops.
//!
//! The detector only ever sees flow-free, ground-removed point clouds (the
//! input type carries no flow channel at all), so it can only learn
//! appearance. Labels mined from motion then generalize: the detector finds
//! the same shapes whether they move or not, and the tracker's length and
//! confidence filters keep regenerated labels precise.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::Command;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::cluster::{self, ClusterParams};
use crate::geom::{wrap_angle, Box3d, Point3, PointFrame};
use crate::io::{read_boxes, write_boxes, BoxRecord, SequenceManifest};
use crate::synth::derive_rng;
use crate::tracker::{self, Track, TrackerParams, TrackingMode};
use crate::trackopt::{self, SmoothParams};
use crate::{Error, Result};

/// Training budget and weight-drop cadence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelfTrainSchedule {
    /// Abstract training steps handed to the detector each round.
    pub steps_per_round: u32,
    /// Detector weights are reset at every round index divisible by this.
    pub rounds_per_weight_drop: u32,
    pub total_rounds: u32,
}

impl Default for SelfTrainSchedule {
    fn default() -> Self {
        SelfTrainSchedule {
            steps_per_round: 30_000,
            rounds_per_weight_drop: 2,
            total_rounds: 4,
        }
    }
}

impl SelfTrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.steps_per_round == 0 {
            return Err(Error::InvalidParam("steps_per_round must be at least 1".into()));
        }
        if self.rounds_per_weight_drop == 0 {
            return Err(Error::InvalidParam(
                "rounds_per_weight_drop must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Whether the 1-indexed round starts from fresh weights.
    pub fn drops_weights(&self, round: u32) -> bool {
        round % self.rounds_per_weight_drop == 0
    }
}

/// One label of the pseudo ground-truth database.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoLabel {
    pub bbox: Box3d,
    pub track_id: u64,
}

/// A labeled object's points, stored relative to its box center and heading
/// so it can be re-posed during augmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct BankObject {
    pub length: f64,
    pub width: f64,
    pub height: f64,
    /// Original box-center height above the scene's z = 0.
    pub z_center: f64,
    /// Points in object coordinates (heading-aligned, centered).
    pub points: Vec<Point3>,
}

/// Per-frame box labels plus the object bank used for insertion.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PseudoGtDatabase {
    pub frames: BTreeMap<usize, Vec<PseudoLabel>>,
    pub bank: Vec<BankObject>,
}

impl PseudoGtDatabase {
    pub fn box_count(&self) -> usize {
        self.frames.values().map(|v| v.len()).sum()
    }

    pub fn records(&self) -> Vec<BoxRecord> {
        self.frames
            .iter()
            .flat_map(|(frame, labels)| {
                labels.iter().map(move |l| BoxRecord {
                    frame_index: *frame,
                    track_id: Some(l.track_id),
                    bbox: l.bbox,
                    is_pseudo: true,
                    observed: true,
                })
            })
            .collect()
    }
}

/// Builds the database from (smoothed, post-filtered) tracks. Coasted
/// entries are excluded from the labels by default: they are predictions,
/// not observations. The object bank keeps the points inside each observed
/// box.
pub fn build_pseudo_gt(
    tracks: &[Track],
    frames: &[PointFrame],
    include_coasted: bool,
) -> PseudoGtDatabase {
    let mut db = PseudoGtDatabase::default();
    for track in tracks {
        for entry in &track.entries {
            if !entry.observed && !include_coasted {
                continue;
            }
            db.frames
                .entry(entry.frame_index)
                .or_default()
                .push(PseudoLabel {
                    bbox: entry.bbox,
                    track_id: track.track_id,
                });
            if entry.observed {
                if let Some(frame) = frames.get(entry.frame_index) {
                    let b = &entry.bbox;
                    let (s, c) = b.heading.sin_cos();
                    let points: Vec<Point3> = frame
                        .points
                        .iter()
                        .filter(|p| b.contains(p))
                        .map(|p| {
                            let dx = p.x - b.center.x;
                            let dy = p.y - b.center.y;
                            Point3::new(c * dx + s * dy, -s * dx + c * dy, p.z - b.center.z)
                        })
                        .collect();
                    db.bank.push(BankObject {
                        length: b.length,
                        width: b.width,
                        height: b.height,
                        z_center: b.center.z,
                        points,
                    });
                }
            }
        }
    }
    db
}

/// What a detector is allowed to see: points only. No flow channel exists
/// on this type, keeping detectors motion-blind by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorFrame {
    pub timestamp_index: usize,
    pub points: Vec<Point3>,
}

/// Ground-removed, flow-free view of a frame.
pub fn detector_frame(frame: &PointFrame, params: &ClusterParams, ground_seed: u64) -> DetectorFrame {
    let fallback;
    let mask: &[bool] = match &frame.ground_mask {
        Some(m) => m,
        None => {
            fallback = cluster::estimate_ground_mask(
                &frame.points,
                params.ground_clearance,
                ground_seed ^ frame.timestamp_index as u64,
            );
            &fallback
        }
    };
    DetectorFrame {
        timestamp_index: frame.timestamp_index,
        points: frame
            .points
            .iter()
            .zip(mask)
            .filter(|(_, &g)| !g)
            .map(|(p, _)| *p)
            .collect(),
    }
}

/// One sequence handed to the detector for a round.
pub struct SequenceView<'a> {
    pub manifest: &'a SequenceManifest,
    pub frames: &'a [DetectorFrame],
    pub labels: &'a PseudoGtDatabase,
}

/// The pluggable detector contract. `infer` must be deterministic given the
/// trained state and the frame; confidences lie in [0, 1].
pub trait Detector {
    /// Drop all learned state (weight reset).
    fn reset(&mut self);
    /// Consume the current pseudo ground truth for a training budget.
    fn train(&mut self, data: &[SequenceView<'_>], steps: u32) -> Result<()>;
    /// Detect boxes for every frame of one sequence.
    fn infer(&mut self, seq: &SequenceView<'_>) -> Result<Vec<Vec<Box3d>>>;
}

/// Appearance-only detector for desk-scale verification.
///
/// Training memorizes the size signature (l, w, h) of every label; inference
/// clusters raw positions (no motion input), fits a box per cluster with a
/// minimum-area-rectangle heading, and scores it by similarity between its
/// size and the nearest memorized signature. Memory accumulates across
/// rounds until `reset`.
#[derive(Debug, Clone)]
pub struct MockDetector {
    pub cluster_params: ClusterParams,
    /// Signatures closer than this (L1 over l, w, h) merge into one entry.
    pub signature_merge_tol: f64,
    /// Confidence decay rate per meter of L1 signature distance.
    pub similarity_decay: f64,
    memory: Vec<[f64; 3]>,
    trained_steps: u64,
}

impl Default for MockDetector {
    fn default() -> Self {
        MockDetector {
            cluster_params: ClusterParams::default(),
            signature_merge_tol: 0.15,
            similarity_decay: 2.0,
            memory: Vec::new(),
            trained_steps: 0,
        }
    }
}

impl MockDetector {
    pub fn with_cluster_params(cluster_params: ClusterParams) -> Self {
        MockDetector {
            cluster_params,
            ..Default::default()
        }
    }

    pub fn memory_len(&self) -> usize {
        self.memory.len()
    }
}

impl Detector for MockDetector {
    fn reset(&mut self) {
        self.memory.clear();
        self.trained_steps = 0;
    }

    fn train(&mut self, data: &[SequenceView<'_>], steps: u32) -> Result<()> {
        for view in data {
            for labels in view.labels.frames.values() {
                for label in labels {
                    let sig = [label.bbox.length, label.bbox.width, label.bbox.height];
                    let known = self.memory.iter().any(|m| {
                        (m[0] - sig[0]).abs() + (m[1] - sig[1]).abs() + (m[2] - sig[2]).abs()
                            < self.signature_merge_tol
                    });
                    if !known {
                        self.memory.push(sig);
                    }
                }
            }
        }
        self.trained_steps += steps as u64;
        Ok(())
    }

    fn infer(&mut self, seq: &SequenceView<'_>) -> Result<Vec<Vec<Box3d>>> {
        let mut out = Vec::with_capacity(seq.frames.len());
        for frame in seq.frames {
            if self.memory.is_empty() {
                out.push(Vec::new());
                continue;
            }
            // Position-only clustering: zero flow features.
            let zero_flow = vec![crate::geom::FlowVector::zero(); frame.points.len()];
            let clusters = cluster::cluster_6d(&frame.points, &zero_flow, &self.cluster_params);
            let mut boxes = Vec::new();
            for members in &clusters {
                let pts: Vec<Point3> = members.iter().map(|&i| frame.points[i]).collect();
                let flows = vec![crate::geom::FlowVector::zero(); pts.len()];
                let fitted = cluster::fit_box(&pts, &flows)?;
                let sig = [fitted.bbox.length, fitted.bbox.width, fitted.bbox.height];
                let best = self
                    .memory
                    .iter()
                    .map(|m| {
                        (m[0] - sig[0]).abs() + (m[1] - sig[1]).abs() + (m[2] - sig[2]).abs()
                    })
                    .fold(f64::INFINITY, f64::min);
                let confidence = (-self.similarity_decay * best).exp().clamp(0.0, 1.0);
                boxes.push(Box3d {
                    confidence,
                    ..fitted.bbox
                });
            }
            out.push(boxes);
        }
        Ok(out)
    }
}

/// Detector realized by an external command. Per round the command is
/// invoked once per sequence as:
///
/// ```text
/// <cmd...> <seq_dir> <pseudo_gt_file> <detections_out> <steps> <fresh 0|1>
/// ```
///
/// It reads the sequence files and the staged `pseudo_gt.txt`, writes box
/// records to the detections path, and signals success through its exit
/// code.
pub struct SubprocessDetector {
    command: Vec<String>,
    workdir: PathBuf,
    staged_steps: u32,
    fresh: bool,
}

impl SubprocessDetector {
    pub fn new(command_line: &str, workdir: impl Into<PathBuf>) -> Result<Self> {
        let command: Vec<String> = command_line.split_whitespace().map(String::from).collect();
        if command.is_empty() {
            return Err(Error::InvalidParam("empty detector command".into()));
        }
        Ok(SubprocessDetector {
            command,
            workdir: workdir.into(),
            staged_steps: 0,
            fresh: true,
        })
    }

    fn seq_dir(&self, seq: &SequenceView<'_>) -> PathBuf {
        self.workdir.join(&seq.manifest.sequence_id)
    }
}

impl Detector for SubprocessDetector {
    fn reset(&mut self) {
        self.fresh = true;
    }

    fn train(&mut self, data: &[SequenceView<'_>], steps: u32) -> Result<()> {
        for seq in data {
            let dir = self.seq_dir(seq);
            std::fs::create_dir_all(&dir)?;
            write_boxes(&seq.labels.records(), dir.join("pseudo_gt.txt"))?;
        }
        self.staged_steps = steps;
        Ok(())
    }

    fn infer(&mut self, seq: &SequenceView<'_>) -> Result<Vec<Vec<Box3d>>> {
        let dir = self.seq_dir(seq);
        std::fs::create_dir_all(&dir)?;
        let pseudo_gt = dir.join("pseudo_gt.txt");
        if !pseudo_gt.is_file() {
            write_boxes(&seq.labels.records(), &pseudo_gt)?;
        }
        let detections_path = dir.join("detections.txt");
        let status = Command::new(&self.command[0])
            .args(&self.command[1..])
            .arg(&seq.manifest.root)
            .arg(&pseudo_gt)
            .arg(&detections_path)
            .arg(self.staged_steps.to_string())
            .arg(if self.fresh { "1" } else { "0" })
            .status()
            .map_err(|e| Error::Detector(format!("failed to spawn `{}`: {e}", self.command[0])))?;
        if !status.success() {
            return Err(Error::Detector(format!(
                "detector command exited with {status}"
            )));
        }
        self.fresh = false;
        let records = read_boxes(&detections_path)?;
        let mut per_frame = vec![Vec::new(); seq.frames.len()];
        for r in records {
            if r.frame_index >= per_frame.len() {
                return Err(Error::Detector(format!(
                    "detection at frame {} outside the sequence",
                    r.frame_index
                )));
            }
            per_frame[r.frame_index].push(r.bbox);
        }
        Ok(per_frame)
    }
}

/// Greedy BEV non-maximum suppression: keep by descending confidence,
/// suppress anything overlapping a kept box above the threshold.
pub fn nms_bev(boxes: Vec<Box3d>, iou_threshold: f64) -> Vec<Box3d> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| boxes[b].confidence.partial_cmp(&boxes[a].confidence).unwrap());
    let mut kept: Vec<Box3d> = Vec::new();
    for idx in order {
        let b = &boxes[idx];
        if kept.iter().all(|k| crate::eval::iou_bev(k, b) <= iou_threshold) {
            kept.push(*b);
        }
    }
    kept
}

// ---------------------------------------------------------------------------
// Training augmentation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    /// Maximum magnitude of the global rotation about z.
    pub max_rotation: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    /// Translation is drawn uniformly from a ball of this radius, meters.
    pub max_translation: f64,
    pub insert_min: usize,
    pub insert_max: usize,
    /// Inserted objects keep a uniform random fraction of their points in
    /// this range.
    pub retention_min: f64,
    pub retention_max: f64,
    /// Rejection-sampling budget per inserted object.
    pub max_placement_tries: usize,
    /// Half-extent of the BEV square used for insertion positions.
    pub placement_half_extent: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            max_rotation: std::f64::consts::PI,
            scale_min: 0.95,
            scale_max: 1.05,
            max_translation: 5.0,
            insert_min: 1,
            insert_max: 15,
            retention_min: 0.3,
            retention_max: 1.0,
            max_placement_tries: 20,
            placement_half_extent: 40.0,
        }
    }
}

/// Uniform sample from a 3D ball by rejection from the enclosing cube.
fn sample_ball(rng: &mut ChaCha8Rng, radius: f64) -> [f64; 3] {
    if radius == 0.0 {
        return [0.0; 3];
    }
    loop {
        let v = [
            rng.random_range(-radius..=radius),
            rng.random_range(-radius..=radius),
            rng.random_range(-radius..=radius),
        ];
        if v[0] * v[0] + v[1] * v[1] + v[2] * v[2] <= radius * radius {
            return v;
        }
    }
}

/// Training augmentation: one global similarity transform (rotation about z,
/// isotropic scale, translation) applied to points and labels consistently,
/// then insertion of bank objects at collision-free poses.
pub fn augment(
    points: &[Point3],
    labels: &[Box3d],
    bank: &[BankObject],
    params: &AugmentParams,
    seed: u64,
) -> (Vec<Point3>, Vec<Box3d>) {
    let mut rng = derive_rng(seed, &[0xa6]);
    let psi = if params.max_rotation > 0.0 {
        rng.random_range(-params.max_rotation..params.max_rotation)
    } else {
        0.0
    };
    let scale = if params.scale_max > params.scale_min {
        rng.random_range(params.scale_min..=params.scale_max)
    } else {
        params.scale_min
    };
    let t = sample_ball(&mut rng, params.max_translation);
    let (s_psi, c_psi) = psi.sin_cos();
    let xform = |p: &Point3| {
        Point3::new(
            scale * (c_psi * p.x - s_psi * p.y) + t[0],
            scale * (s_psi * p.x + c_psi * p.y) + t[1],
            scale * p.z + t[2],
        )
    };

    let mut out_points: Vec<Point3> = points.iter().map(&xform).collect();
    let mut out_labels: Vec<Box3d> = labels
        .iter()
        .map(|b| Box3d {
            center: xform(&b.center),
            length: b.length * scale,
            width: b.width * scale,
            height: b.height * scale,
            heading: wrap_angle(b.heading + psi),
            ..*b
        })
        .collect();

    if bank.is_empty() {
        return (out_points, out_labels);
    }

    let k = rng.random_range(params.insert_min..=params.insert_max);
    for _ in 0..k {
        let obj = &bank[rng.random_range(0..bank.len())];
        let retention = rng.random_range(params.retention_min..=params.retention_max);
        let mut placed = None;
        for _ in 0..params.max_placement_tries {
            let cx = rng.random_range(-params.placement_half_extent..params.placement_half_extent);
            let cy = rng.random_range(-params.placement_half_extent..params.placement_half_extent);
            let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            // Ground level follows the global transform of the z = 0 plane.
            let cz = scale * obj.z_center + t[2];
            let candidate = match Box3d::new(
                Point3::new(cx, cy, cz),
                obj.length,
                obj.width,
                obj.height,
                yaw,
                1.0,
            ) {
                Ok(b) => b,
                Err(_) => continue,
            };
            let collides = out_labels
                .iter()
                .any(|l| crate::eval::intersection_area_bev(l, &candidate) > 0.0);
            if !collides {
                placed = Some(candidate);
                break;
            }
        }
        let Some(candidate) = placed else {
            continue; // no collision-free pose found; skip this object
        };
        let (s_yaw, c_yaw) = candidate.heading.sin_cos();
        for p in &obj.points {
            if rng.random_range(0.0..1.0) > retention {
                continue;
            }
            out_points.push(Point3::new(
                candidate.center.x + c_yaw * p.x - s_yaw * p.y,
                candidate.center.y + s_yaw * p.x + c_yaw * p.y,
                candidate.center.z + p.z,
            ));
        }
        out_labels.push(candidate);
    }
    (out_points, out_labels)
}

// ---------------------------------------------------------------------------
// Round orchestration
// ---------------------------------------------------------------------------

/// One sequence the self-training loop works on.
pub struct SelfTrainSequence {
    pub manifest: SequenceManifest,
    pub frames: Vec<PointFrame>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfTrainConfig {
    pub schedule: SelfTrainSchedule,
    pub cluster: ClusterParams,
    pub tracker: TrackerParams,
    pub smooth: SmoothParams,
    /// BEV NMS threshold applied to detector outputs before tracking.
    pub nms_iou: f64,
    /// Whether coasted track entries enter the regenerated labels.
    pub include_coasted: bool,
    pub seed: u64,
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        SelfTrainConfig {
            schedule: SelfTrainSchedule::default(),
            cluster: ClusterParams::default(),
            tracker: TrackerParams::default(),
            smooth: SmoothParams::default(),
            nms_iou: 0.1,
            include_coasted: false,
            seed: 0,
        }
    }
}

/// Databases per sequence id plus the completed round count.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SelfTrainState {
    pub dbs: BTreeMap<String, PseudoGtDatabase>,
    pub round: u32,
}

fn detector_frames(seq: &SelfTrainSequence, config: &SelfTrainConfig) -> Vec<DetectorFrame> {
    seq.frames
        .iter()
        .map(|f| detector_frame(f, &config.cluster, config.seed))
        .collect()
}

/// Runs one round: optional weight drop, training on the current database,
/// inference, NMS, tracking, track optimization, database replacement.
/// On error the previous state is left untouched.
pub fn run_round(
    state: &SelfTrainState,
    config: &SelfTrainConfig,
    detector: &mut dyn Detector,
    seqs: &[SelfTrainSequence],
) -> Result<SelfTrainState> {
    config.schedule.validate()?;
    let round = state.round + 1;
    if config.schedule.drops_weights(round) {
        detector.reset();
    }

    let det_frames: Vec<Vec<DetectorFrame>> =
        seqs.iter().map(|s| detector_frames(s, config)).collect();
    let empty_db = PseudoGtDatabase::default();
    let views: Vec<SequenceView<'_>> = seqs
        .iter()
        .zip(&det_frames)
        .map(|(seq, frames)| SequenceView {
            manifest: &seq.manifest,
            frames,
            labels: state.dbs.get(&seq.manifest.sequence_id).unwrap_or(&empty_db),
        })
        .collect();

    detector.train(&views, config.schedule.steps_per_round)?;

    let mut new_dbs = BTreeMap::new();
    for (seq, view) in seqs.iter().zip(&views) {
        let detections = detector.infer(view)?;
        if detections.len() != seq.frames.len() {
            return Err(Error::Detector(format!(
                "detector returned {} frames for a {}-frame sequence",
                detections.len(),
                seq.frames.len()
            )));
        }
        let candidates: Vec<Vec<Box3d>> = detections
            .into_iter()
            .map(|boxes| nms_bev(boxes, config.nms_iou))
            .collect();
        let tracks = tracker::track_stage(
            &seq.frames,
            &candidates,
            &config.tracker,
            TrackingMode::Regeneration,
        )?;
        let poses = tracker::world_poses(&seq.frames)?;
        let dt = seq.manifest.frame_interval_s;
        let optimized: Vec<Track> = tracks
            .iter()
            .map(|t| trackopt::optimize_track(t, &poses, &config.smooth, dt))
            .collect::<Result<_>>()?;
        let db = build_pseudo_gt(&optimized, &seq.frames, config.include_coasted);
        new_dbs.insert(seq.manifest.sequence_id.clone(), db);
    }

    Ok(SelfTrainState {
        dbs: new_dbs,
        round,
    })
}

/// Runs the configured number of rounds, returning the state after each.
pub fn run_self_training(
    initial: SelfTrainState,
    config: &SelfTrainConfig,
    detector: &mut dyn Detector,
    seqs: &[SelfTrainSequence],
    mut on_round: impl FnMut(&SelfTrainState) -> Result<()>,
) -> Result<SelfTrainState> {
    let mut state = initial;
    for _ in 0..config.schedule.total_rounds {
        state = run_round(&state, config, detector, seqs)?;
        on_round(&state)?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{FlowVector, RigidTransform};
    use crate::tracker::TrackEntry;

    fn bbox(x: f64, y: f64, conf: f64) -> Box3d {
        Box3d::new(Point3::new(x, y, 0.75), 4.0, 2.0, 1.5, 0.0, conf).unwrap()
    }

    fn track_of(centers: &[(usize, f64, f64)], observed: &[bool]) -> Track {
        Track {
            track_id: 0,
            entries: centers
                .iter()
                .zip(observed)
                .map(|(&(f, x, y), &obs)| TrackEntry {
                    frame_index: f,
                    bbox: bbox(x, y, 1.0),
                    observed: obs,
                })
                .collect(),
        }
    }

    fn frames_with_points(n: usize, centers: &[(f64, f64)]) -> Vec<PointFrame> {
        (0..n)
            .map(|t| PointFrame {
                timestamp_index: t,
                points: centers
                    .iter()
                    .flat_map(|&(x, y)| {
                        vec![
                            Point3::new(x, y, 0.75),
                            Point3::new(x + 0.5, y, 0.5),
                            Point3::new(x - 0.5, y, 1.0),
                        ]
                    })
                    .collect(),
                flow: Some(vec![FlowVector::zero(); centers.len() * 3]),
                ground_mask: None,
                pose_to_next: Some(RigidTransform::identity()),
            })
            .collect()
    }

    #[test]
    fn empty_tracks_build_empty_database() {
        let db = build_pseudo_gt(&[], &[], false);
        assert_eq!(db.box_count(), 0);
        assert!(db.bank.is_empty());
    }

    #[test]
    fn ten_frame_track_builds_ten_entries_and_bank() {
        let centers: Vec<(usize, f64, f64)> = (0..10).map(|t| (t, 0.0, 0.0)).collect();
        let track = track_of(&centers, &vec![true; 10]);
        let frames = frames_with_points(10, &[(0.0, 0.0)]);
        let db = build_pseudo_gt(&[track], &frames, false);
        assert_eq!(db.frames.len(), 10);
        assert_eq!(db.box_count(), 10);
        assert_eq!(db.bank.len(), 10);
        // Bank points are in object coordinates inside the box extents.
        for obj in &db.bank {
            assert_eq!(obj.points.len(), 3);
            for p in &obj.points {
                assert!(p.x.abs() <= obj.length / 2.0 + 1e-9);
                assert!(p.y.abs() <= obj.width / 2.0 + 1e-9);
            }
        }
    }

    #[test]
    fn coasted_entries_stay_out_of_labels_by_default() {
        let centers: Vec<(usize, f64, f64)> = (0..6).map(|t| (t, 0.0, 0.0)).collect();
        let mut observed = vec![true; 6];
        observed[3] = false;
        let track = track_of(&centers, &observed);
        let frames = frames_with_points(6, &[(0.0, 0.0)]);
        let db = build_pseudo_gt(&[track.clone()], &frames, false);
        assert_eq!(db.box_count(), 5);
        assert!(!db.frames.contains_key(&3));
        let with_coasted = build_pseudo_gt(&[track], &frames, true);
        assert_eq!(with_coasted.box_count(), 6);
        // The bank only ever holds observed boxes.
        assert_eq!(with_coasted.bank.len(), 5);
    }

    #[test]
    fn detector_frame_strips_ground_and_flow() {
        let frame = PointFrame {
            timestamp_index: 0,
            points: vec![Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 0.0, 1.0)],
            flow: Some(vec![FlowVector::new(1.0, 0.0, 0.0); 2]),
            ground_mask: Some(vec![true, false]),
            pose_to_next: None,
        };
        let view = detector_frame(&frame, &ClusterParams::default(), 0);
        assert_eq!(view.points.len(), 1);
        assert_eq!(view.points[0], Point3::new(1.0, 0.0, 1.0));
    }

    #[test]
    fn mock_detector_recognizes_trained_sizes() {
        let mut det = MockDetector::default();
        let mut db = PseudoGtDatabase::default();
        db.frames.entry(0).or_default().push(PseudoLabel {
            bbox: bbox(0.0, 0.0, 1.0),
            track_id: 0,
        });
        let manifest = SequenceManifest::new("/tmp/unused", "s", 1, 0.1).unwrap();

        // A cuboid point cloud of the trained size at a new location, plus a
        // small odd-sized clutter clump.
        let mut points = Vec::new();
        for i in 0..=8 {
            for j in 0..=4 {
                let x = 20.0 - 2.0 + i as f64 * 0.5;
                let y = 5.0 - 1.0 + j as f64 * 0.5;
                points.push(Point3::new(x, y, 0.1));
                points.push(Point3::new(x, y, 0.75));
                points.push(Point3::new(x, y, 1.4));
            }
        }
        for k in 0..6 {
            points.push(Point3::new(-10.0 + 0.2 * k as f64, -10.0, 0.5));
        }
        let frames = vec![DetectorFrame {
            timestamp_index: 0,
            points,
        }];
        let view = SequenceView {
            manifest: &manifest,
            frames: &frames,
            labels: &db,
        };
        det.train(&[SequenceView { manifest: &manifest, frames: &frames, labels: &db }], 100).unwrap();
        assert_eq!(det.memory_len(), 1);
        let detections = det.infer(&view).unwrap();
        assert_eq!(detections.len(), 1);
        let frame_dets = &detections[0];
        assert_eq!(frame_dets.len(), 2);
        let car = frame_dets
            .iter()
            .find(|b| (b.center.x - 20.0).abs() < 1.0)
            .expect("trained size found");
        assert!(car.confidence > 0.5, "confidence {}", car.confidence);
        let clutter = frame_dets.iter().find(|b| b.center.x < 0.0).unwrap();
        assert!(clutter.confidence < 0.05, "clutter confidence {}", clutter.confidence);
    }

    #[test]
    fn mock_detector_reset_clears_memory() {
        let mut det = MockDetector::default();
        let mut db = PseudoGtDatabase::default();
        db.frames.entry(0).or_default().push(PseudoLabel {
            bbox: bbox(0.0, 0.0, 1.0),
            track_id: 0,
        });
        let manifest = SequenceManifest::new("/tmp/unused", "s", 1, 0.1).unwrap();
        let frames: Vec<DetectorFrame> = Vec::new();
        det.train(&[SequenceView { manifest: &manifest, frames: &frames, labels: &db }], 10).unwrap();
        assert_eq!(det.memory_len(), 1);
        det.reset();
        assert_eq!(det.memory_len(), 0);
    }

    #[test]
    fn nms_suppresses_overlaps_keeps_confident() {
        let a = bbox(0.0, 0.0, 0.9);
        let b = bbox(0.5, 0.0, 0.5); // heavy overlap with a
        let c = bbox(20.0, 0.0, 0.3);
        let kept = nms_bev(vec![b, a, c], 0.1);
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].confidence, 0.9);
        assert_eq!(kept[1].confidence, 0.3);
    }

    #[test]
    fn augment_identity_draw_keeps_labels() {
        let params = AugmentParams {
            max_rotation: 0.0,
            scale_min: 1.0,
            scale_max: 1.0,
            max_translation: 0.0,
            ..Default::default()
        };
        let points = vec![Point3::new(1.0, 2.0, 0.5), Point3::new(-3.0, 0.0, 1.0)];
        let labels = vec![bbox(1.0, 2.0, 1.0)];
        let bank = vec![BankObject {
            length: 4.0,
            width: 2.0,
            height: 1.5,
            z_center: 0.75,
            points: vec![Point3::new(0.0, 0.0, 0.0)],
        }];
        let (out_points, out_labels) = augment(&points, &labels, &bank, &params, 3);
        assert_eq!(&out_points[..2], &points[..]);
        assert_eq!(out_labels[0], labels[0]);
        assert!(out_labels.len() >= 1);
    }

    #[test]
    fn augment_preserves_scaled_pairwise_distances() {
        let params = AugmentParams::default();
        let mut rng = derive_rng(5, &[0x77]);
        let points: Vec<Point3> = (0..40)
            .map(|_| {
                Point3::new(
                    rng.random_range(-20.0..20.0),
                    rng.random_range(-20.0..20.0),
                    rng.random_range(0.0..2.0),
                )
            })
            .collect();
        let (out_points, _) = augment(&points, &[], &[], &params, 11);
        // With no labels and no bank there are no insertions: pure
        // similarity transform.
        assert_eq!(out_points.len(), points.len());
        let d_before = points[0].dist(&points[1]);
        let d_after = out_points[0].dist(&out_points[1]);
        let scale = d_after / d_before;
        assert!((0.95..=1.05).contains(&scale));
        for i in 0..points.len() {
            for j in (i + 1)..points.len().min(i + 5) {
                let before = points[i].dist(&points[j]) * scale;
                let after = out_points[i].dist(&out_points[j]);
                assert!((before - after).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn augment_labeled_points_stay_inside_transformed_labels() {
        let params = AugmentParams::default();
        let label = bbox(3.0, -2.0, 1.0);
        let mut rng = derive_rng(9, &[0x78]);
        let points: Vec<Point3> = (0..50)
            .map(|_| {
                Point3::new(
                    label.center.x + rng.random_range(-1.9..1.9),
                    label.center.y + rng.random_range(-0.9..0.9),
                    label.center.z + rng.random_range(-0.7..0.7),
                )
            })
            .collect();
        for p in &points {
            assert!(label.contains(p));
        }
        for seed in 0..20u64 {
            let (out_points, out_labels) = augment(&points, &[label], &[], &params, seed);
            let tl = out_labels[0].inflated(1e-9);
            for p in &out_points {
                assert!(tl.contains(p), "seed {seed}: point escaped its label");
            }
        }
    }

    #[test]
    fn augment_insertions_avoid_existing_labels() {
        let params = AugmentParams {
            placement_half_extent: 12.0,
            ..Default::default()
        };
        let labels = vec![bbox(0.0, 0.0, 1.0), bbox(8.0, 0.0, 1.0)];
        let bank: Vec<BankObject> = (0..4)
            .map(|i| BankObject {
                length: 4.0,
                width: 2.0,
                height: 1.5,
                z_center: 0.75,
                points: vec![Point3::new(0.1 * i as f64, 0.0, 0.0)],
            })
            .collect();
        for seed in 0..30u64 {
            let (_, out_labels) = augment(&[], &labels, &bank, &params, seed);
            for (i, a) in out_labels.iter().enumerate() {
                for b in &out_labels[i + 1..] {
                    assert_eq!(
                        crate::eval::intersection_area_bev(a, b),
                        0.0,
                        "seed {seed}: inserted boxes overlap"
                    );
                }
            }
        }
    }

    #[test]
    fn augment_is_deterministic_per_seed() {
        let params = AugmentParams::default();
        let points = vec![Point3::new(1.0, 2.0, 0.5); 10];
        let labels = vec![bbox(1.0, 2.0, 1.0)];
        let bank = vec![BankObject {
            length: 4.0,
            width: 2.0,
            height: 1.5,
            z_center: 0.75,
            points: vec![Point3::new(0.0, 0.0, 0.0); 20],
        }];
        let a = augment(&points, &labels, &bank, &params, 42);
        let b = augment(&points, &labels, &bank, &params, 42);
        assert_eq!(a, b);
    }

    /// Records reset/train calls so the weight-drop schedule is observable.
    struct SpyDetector {
        resets_at: Vec<u32>,
        trains: u32,
        inner: MockDetector,
    }

    impl Detector for SpyDetector {
        fn reset(&mut self) {
            self.resets_at.push(self.trains + 1);
            self.inner.reset();
        }
        fn train(&mut self, data: &[SequenceView<'_>], steps: u32) -> Result<()> {
            self.trains += 1;
            self.inner.train(data, steps)
        }
        fn infer(&mut self, seq: &SequenceView<'_>) -> Result<Vec<Vec<Box3d>>> {
            self.inner.infer(seq)
        }
    }

    fn tiny_sequence() -> SelfTrainSequence {
        SelfTrainSequence {
            manifest: SequenceManifest::new("/tmp/unused", "seq0", 6, 0.1).unwrap(),
            frames: frames_with_points(6, &[(5.0, 0.0)]),
        }
    }

    #[test]
    fn weight_drops_at_multiples_of_the_cadence() {
        let mut spy = SpyDetector {
            resets_at: Vec::new(),
            trains: 0,
            inner: MockDetector::default(),
        };
        let config = SelfTrainConfig {
            schedule: SelfTrainSchedule {
                steps_per_round: 10,
                rounds_per_weight_drop: 2,
                total_rounds: 4,
            },
            ..Default::default()
        };
        let seqs = vec![tiny_sequence()];
        let state = SelfTrainState::default();
        let final_state =
            run_self_training(state, &config, &mut spy, &seqs, |_| Ok(())).unwrap();
        assert_eq!(final_state.round, 4);
        assert_eq!(spy.trains, 4);
        // Fresh weights at rounds 2 and 4.
        assert_eq!(spy.resets_at, vec![2, 4]);
    }

    #[test]
    fn zero_rounds_preserve_initial_database() {
        let mut det = MockDetector::default();
        let config = SelfTrainConfig {
            schedule: SelfTrainSchedule {
                total_rounds: 0,
                ..Default::default()
            },
            ..Default::default()
        };
        let mut initial = SelfTrainState::default();
        initial.dbs.insert("seq0".into(), PseudoGtDatabase::default());
        initial
            .dbs
            .get_mut("seq0")
            .unwrap()
            .frames
            .entry(0)
            .or_default()
            .push(PseudoLabel {
                bbox: bbox(0.0, 0.0, 1.0),
                track_id: 0,
            });
        let before = initial.clone();
        let out = run_self_training(initial, &config, &mut det, &[tiny_sequence()], |_| Ok(()))
            .unwrap();
        assert_eq!(out, before);
    }

    struct FailingDetector;
    impl Detector for FailingDetector {
        fn reset(&mut self) {}
        fn train(&mut self, _: &[SequenceView<'_>], _: u32) -> Result<()> {
            Err(Error::Detector("synthetic failure".into()))
        }
        fn infer(&mut self, _: &SequenceView<'_>) -> Result<Vec<Vec<Box3d>>> {
            unreachable!()
        }
    }

    #[test]
    fn detector_failure_preserves_previous_state() {
        let mut det = FailingDetector;
        let config = SelfTrainConfig::default();
        let mut state = SelfTrainState::default();
        state.dbs.insert("seq0".into(), PseudoGtDatabase::default());
        let before = state.clone();
        let result = run_round(&state, &config, &mut det, &[tiny_sequence()]);
        assert!(matches!(result, Err(Error::Detector(_))));
        assert_eq!(state, before);
    }

    #[test]
    fn run_round_is_reproducible() {
        let seqs = vec![tiny_sequence()];
        let config = SelfTrainConfig {
            schedule: SelfTrainSchedule {
                steps_per_round: 10,
                rounds_per_weight_drop: 2,
                total_rounds: 1,
            },
            ..Default::default()
        };
        let mut state = SelfTrainState::default();
        state.dbs.insert("seq0".into(), PseudoGtDatabase::default());
        state
            .dbs
            .get_mut("seq0")
            .unwrap()
            .frames
            .entry(0)
            .or_default()
            .push(PseudoLabel {
                bbox: bbox(5.0, 0.0, 1.0),
                track_id: 0,
            });
        let mut det_a = MockDetector::default();
        let mut det_b = MockDetector::default();
        let a = run_round(&state, &config, &mut det_a, &seqs).unwrap();
        let b = run_round(&state, &config, &mut det_b, &seqs).unwrap();
        assert_eq!(a, b);
    }
}
