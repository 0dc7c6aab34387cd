//! Stage composition and configuration.
//!
//! Every CLI subcommand calls one of the stage functions here, and
//! `run_pipeline` composes them in order, so a pipeline run and a manual
//! stage-by-stage run produce byte-identical artifacts. All stage outputs
//! are deterministic given (inputs, config, seed): nothing here writes
//! timestamps or machine-dependent values into files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::cluster::{self, ClusterParams};
use crate::eval::{self, ApResult, EvalConfig, EvalRegion, IouSpace, MotionSplit};
use crate::geom::Box3d;
use crate::io::{self, read_boxes, write_boxes, BoxRecord, SequenceManifest};
use crate::selftrain::{
    self, Detector, MockDetector, PseudoGtDatabase, SelfTrainConfig, SelfTrainSchedule,
    SelfTrainSequence, SelfTrainState, SubprocessDetector,
};
use crate::tracker::{self, TrackerParams, TrackingMode};
use crate::trackopt::{self, SmoothParams};
use crate::{Error, Result};

/// Every stage's parameter block plus the global seed and worker knob.
/// Defaults carry the single hyperparameter set used everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Worker threads for per-frame and per-track parallelism; 0 keeps the
    /// process default.
    pub workers: usize,
    pub cluster: ClusterParams,
    pub tracker: TrackerParams,
    pub smooth: SmoothParams,
    pub schedule: SelfTrainSchedule,
    pub nms_iou: f64,
    pub include_coasted: bool,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            workers: 0,
            cluster: ClusterParams::default(),
            tracker: TrackerParams::default(),
            smooth: SmoothParams::default(),
            schedule: SelfTrainSchedule::default(),
            nms_iou: 0.1,
            include_coasted: false,
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.cluster.validate()?;
        self.tracker.validate()?;
        self.smooth.validate()?;
        self.schedule.validate()?;
        self.eval.validate()?;
        if !(self.nms_iou.is_finite() && (0.0..1.0).contains(&self.nms_iou)) {
            return Err(Error::InvalidParam(format!(
                "selftrain.nms_iou must be in [0, 1), got {}",
                self.nms_iou
            )));
        }
        Ok(())
    }

    pub fn selftrain_config(&self) -> SelfTrainConfig {
        SelfTrainConfig {
            schedule: self.schedule,
            cluster: self.cluster,
            tracker: self.tracker,
            smooth: self.smooth,
            nms_iou: self.nms_iou,
            include_coasted: self.include_coasted,
            seed: self.seed,
        }
    }

    /// Serializes as section-prefixed key=value lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "workers={}", self.workers);
        let c = &self.cluster;
        let _ = writeln!(s, "cluster.static_speed_threshold={}", c.static_speed_threshold);
        let _ = writeln!(s, "cluster.dbscan_eps={}", c.dbscan_eps);
        let _ = writeln!(s, "cluster.dbscan_min_pts={}", c.dbscan_min_pts);
        let _ = writeln!(s, "cluster.max_aspect={}", c.max_aspect);
        let _ = writeln!(s, "cluster.min_area={}", c.min_area);
        let _ = writeln!(s, "cluster.min_volume={}", c.min_volume);
        let _ = writeln!(s, "cluster.flow_feature_scale={}", c.flow_feature_scale);
        let _ = writeln!(s, "cluster.ground_clearance={}", c.ground_clearance);
        let t = &self.tracker;
        let _ = writeln!(s, "tracker.match_max_dist={}", t.match_max_dist);
        let _ = writeln!(s, "tracker.coast_steps={}", t.coast_steps);
        let _ = writeln!(s, "tracker.min_track_len={}", t.min_track_len);
        let _ = writeln!(s, "tracker.min_median_conf={}", t.min_median_conf);
        let m = &self.smooth;
        let _ = writeln!(s, "smooth.beta={}", m.beta);
        let _ = writeln!(s, "smooth.min_track_length_m={}", m.min_track_length_m);
        let _ = writeln!(s, "smooth.step_size={}", m.step_size);
        let _ = writeln!(s, "smooth.steps={}", m.steps);
        let st = &self.schedule;
        let _ = writeln!(s, "selftrain.steps_per_round={}", st.steps_per_round);
        let _ = writeln!(s, "selftrain.rounds_per_weight_drop={}", st.rounds_per_weight_drop);
        let _ = writeln!(s, "selftrain.total_rounds={}", st.total_rounds);
        let _ = writeln!(s, "selftrain.nms_iou={}", self.nms_iou);
        let _ = writeln!(s, "selftrain.include_coasted={}", self.include_coasted as u8);
        let e = &self.eval;
        let _ = writeln!(s, "eval.iou_space={}", e.iou_space);
        let _ = writeln!(
            s,
            "eval.thresholds={}",
            e.iou_thresholds
                .iter()
                .map(|t| t.to_string())
                .collect::<Vec<_>>()
                .join(",")
        );
        match &e.eval_region {
            Some(r) => {
                let _ = writeln!(s, "eval.region={}x{}", r.size_x, r.size_y);
            }
            None => {
                let _ = writeln!(s, "eval.region=none");
            }
        }
        match e.min_pr_clip {
            Some(c) => {
                let _ = writeln!(s, "eval.min_pr_clip={c}");
            }
            None => {
                let _ = writeln!(s, "eval.min_pr_clip=none");
            }
        }
        let _ = writeln!(s, "eval.motion_split_threshold={}", e.motion_split_threshold);
        let _ = writeln!(s, "eval.crop_predictions_only={}", e.crop_predictions_only as u8);
        s
    }

    /// Parses the key=value format, rejecting unknown keys.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: String| Error::MalformedLine {
                path: "<config>".into(),
                line: lineno + 1,
                msg,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad("expected key=value".into()))?;
            let (key, value) = (key.trim(), value.trim());
            cfg.apply(key, value).map_err(|e| bad(e.to_string()))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one key=value override.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let f64v = || -> Result<f64> {
            value
                .parse::<f64>()
                .map_err(|e| Error::InvalidParam(format!("{key}: bad number `{value}`: {e}")))
        };
        let usizev = || -> Result<usize> {
            value
                .parse::<usize>()
                .map_err(|e| Error::InvalidParam(format!("{key}: bad integer `{value}`: {e}")))
        };
        let u32v = || -> Result<u32> {
            value
                .parse::<u32>()
                .map_err(|e| Error::InvalidParam(format!("{key}: bad integer `{value}`: {e}")))
        };
        let boolv = || -> Result<bool> {
            match value {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(Error::InvalidParam(format!("{key}: expected 0 or 1, got `{value}`"))),
            }
        };
        match key {
            "seed" => {
                self.seed = value
                    .parse::<u64>()
                    .map_err(|e| Error::InvalidParam(format!("seed: {e}")))?
            }
            "workers" => self.workers = usizev()?,
            "cluster.static_speed_threshold" => self.cluster.static_speed_threshold = f64v()?,
            "cluster.dbscan_eps" => self.cluster.dbscan_eps = f64v()?,
            "cluster.dbscan_min_pts" => self.cluster.dbscan_min_pts = usizev()?,
            "cluster.max_aspect" => self.cluster.max_aspect = f64v()?,
            "cluster.min_area" => self.cluster.min_area = f64v()?,
            "cluster.min_volume" => self.cluster.min_volume = f64v()?,
            "cluster.flow_feature_scale" => self.cluster.flow_feature_scale = f64v()?,
            "cluster.ground_clearance" => self.cluster.ground_clearance = f64v()?,
            "tracker.match_max_dist" => self.tracker.match_max_dist = f64v()?,
            "tracker.coast_steps" => self.tracker.coast_steps = usizev()?,
            "tracker.min_track_len" => self.tracker.min_track_len = usizev()?,
            "tracker.min_median_conf" => self.tracker.min_median_conf = f64v()?,
            "smooth.beta" => self.smooth.beta = f64v()?,
            "smooth.min_track_length_m" => self.smooth.min_track_length_m = f64v()?,
            "smooth.step_size" => self.smooth.step_size = f64v()?,
            "smooth.steps" => self.smooth.steps = usizev()?,
            "selftrain.steps_per_round" => self.schedule.steps_per_round = u32v()?,
            "selftrain.rounds_per_weight_drop" => self.schedule.rounds_per_weight_drop = u32v()?,
            "selftrain.total_rounds" => self.schedule.total_rounds = u32v()?,
            "selftrain.nms_iou" => self.nms_iou = f64v()?,
            "selftrain.include_coasted" => self.include_coasted = boolv()?,
            "eval.iou_space" => {
                self.eval.iou_space = match value {
                    "bev" => IouSpace::Bev,
                    "3d" => IouSpace::ThreeD,
                    other => {
                        return Err(Error::InvalidParam(format!(
                            "eval.iou_space must be bev or 3d, got `{other}`"
                        )))
                    }
                }
            }
            "eval.thresholds" => {
                self.eval.iou_thresholds = value
                    .split(',')
                    .map(|t| {
                        t.trim().parse::<f64>().map_err(|e| {
                            Error::InvalidParam(format!("eval.thresholds: `{t}`: {e}"))
                        })
                    })
                    .collect::<Result<_>>()?
            }
            "eval.region" => {
                self.eval.eval_region = if value == "none" {
                    None
                } else {
                    Some(parse_region(value)?)
                }
            }
            "eval.min_pr_clip" => {
                self.eval.min_pr_clip = if value == "none" { None } else { Some(f64v()?) }
            }
            "eval.motion_split_threshold" => self.eval.motion_split_threshold = f64v()?,
            "eval.crop_predictions_only" => self.eval.crop_predictions_only = boolv()?,
            other => {
                return Err(Error::InvalidParam(format!("unknown config key `{other}`")));
            }
        }
        Ok(())
    }
}

/// Parses `WIDTHxHEIGHT` in meters, e.g. `100x40`.
pub fn parse_region(value: &str) -> Result<EvalRegion> {
    let (x, y) = value
        .split_once('x')
        .ok_or_else(|| Error::InvalidParam(format!("region must look like 100x100, got `{value}`")))?;
    let size_x = x
        .parse::<f64>()
        .map_err(|e| Error::InvalidParam(format!("region width: {e}")))?;
    let size_y = y
        .parse::<f64>()
        .map_err(|e| Error::InvalidParam(format!("region height: {e}")))?;
    Ok(EvalRegion { size_x, size_y })
}

/// Runs `f` in a rayon pool with the requested worker count; 0 keeps the
/// caller's pool.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        Ok(f())
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::InvalidParam(format!("worker pool: {e}")))?;
        Ok(pool.install(f))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StageStats {
    pub frames: usize,
    pub boxes: usize,
    pub tracks: usize,
}

/// Mines candidate boxes for every frame and writes `boxes_init` records.
pub fn stage_cluster(
    seq_dir: &Path,
    out_file: &Path,
    params: &ClusterParams,
    seed: u64,
) -> Result<StageStats> {
    let manifest = SequenceManifest::load(seq_dir)?;
    let frames = io::read_all_frames(&manifest)?;
    let per_frame: Vec<Vec<Box3d>> = frames
        .par_iter()
        .map(|f| {
            cluster::mine_frame(f, params, manifest.frame_interval_s, seed)
                .map(|v| v.into_iter().map(|fb| fb.bbox).collect())
        })
        .collect::<Result<_>>()?;
    let mut records = Vec::new();
    for (t, boxes) in per_frame.iter().enumerate() {
        for b in boxes {
            records.push(BoxRecord::new(t, None, *b, true));
        }
    }
    write_boxes(&records, out_file)?;
    Ok(StageStats {
        frames: frames.len(),
        boxes: records.len(),
        tracks: 0,
    })
}

fn group_by_frame(records: &[BoxRecord], frame_count: usize) -> Result<Vec<Vec<Box3d>>> {
    let mut out = vec![Vec::new(); frame_count];
    for r in records {
        if r.frame_index >= frame_count {
            return Err(Error::InvalidParam(format!(
                "box at frame {} outside the {}-frame sequence",
                r.frame_index, frame_count
            )));
        }
        out[r.frame_index].push(r.bbox);
    }
    Ok(out)
}

/// Tracks candidate boxes through the sequence and writes track records.
pub fn stage_track(
    seq_dir: &Path,
    boxes_file: &Path,
    out_file: &Path,
    params: &TrackerParams,
    mode: TrackingMode,
) -> Result<StageStats> {
    let manifest = SequenceManifest::load(seq_dir)?;
    let frames = io::read_all_frames(&manifest)?;
    let candidates = group_by_frame(&read_boxes(boxes_file)?, frames.len())?;
    let tracks = tracker::track_stage(&frames, &candidates, params, mode)?;
    let records = tracker::tracks_to_records(&tracks);
    write_boxes(&records, out_file)?;
    Ok(StageStats {
        frames: frames.len(),
        boxes: records.len(),
        tracks: tracks.len(),
    })
}

/// Smooths, realigns, and size-votes every track.
pub fn stage_smooth(
    seq_dir: &Path,
    tracks_file: &Path,
    out_file: &Path,
    params: &SmoothParams,
) -> Result<StageStats> {
    let manifest = SequenceManifest::load(seq_dir)?;
    let frames = io::read_all_frames(&manifest)?;
    let poses = tracker::world_poses(&frames)?;
    let tracks = tracker::records_to_tracks(&read_boxes(tracks_file)?)?;
    let optimized: Vec<_> = tracks
        .par_iter()
        .map(|t| trackopt::optimize_track(t, &poses, params, manifest.frame_interval_s))
        .collect::<Result<_>>()?;
    let records = tracker::tracks_to_records(&optimized);
    write_boxes(&records, out_file)?;
    Ok(StageStats {
        frames: frames.len(),
        boxes: records.len(),
        tracks: optimized.len(),
    })
}

/// Which detector realization the self-training loop drives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DetectorKind {
    Mock,
    Subprocess(String),
}

impl DetectorKind {
    pub fn parse(value: &str) -> Result<Self> {
        if value == "mock" {
            Ok(DetectorKind::Mock)
        } else if let Some(cmd) = value.strip_prefix("subprocess:") {
            if cmd.trim().is_empty() {
                return Err(Error::InvalidParam("empty subprocess detector command".into()));
            }
            Ok(DetectorKind::Subprocess(cmd.to_string()))
        } else {
            Err(Error::InvalidParam(format!(
                "detector must be `mock` or `subprocess:<cmd>`, got `{value}`"
            )))
        }
    }

    pub fn build(&self, workdir: &Path, cluster: &ClusterParams) -> Result<Box<dyn Detector>> {
        match self {
            DetectorKind::Mock => Ok(Box::new(MockDetector::with_cluster_params(*cluster))),
            DetectorKind::Subprocess(cmd) => Ok(Box::new(SubprocessDetector::new(
                cmd,
                workdir.join("detector"),
            )?)),
        }
    }
}

/// Per-sequence artifact paths inside a self-training output directory.
fn seq_out_dir(out_dir: &Path, seq_id: &str, multi: bool) -> PathBuf {
    if multi {
        out_dir.join(seq_id)
    } else {
        out_dir.to_path_buf()
    }
}

/// Ensures the initial pseudo ground truth exists for one sequence,
/// producing boxes_init / tracks / tracks_smooth files, and returns the
/// smoothed tracks as a database.
fn initial_database(
    seq: &SelfTrainSequence,
    out: &Path,
    config: &PipelineConfig,
) -> Result<PseudoGtDatabase> {
    std::fs::create_dir_all(out)?;
    let boxes_init = out.join("boxes_init.txt");
    let tracks_path = out.join("tracks.txt");
    let smooth_path = out.join("tracks_smooth.txt");
    let seq_dir = &seq.manifest.root;
    if !smooth_path.is_file() {
        let started = std::time::Instant::now();
        let stats = stage_cluster(seq_dir, &boxes_init, &config.cluster, config.seed)
            .map_err(stage_err("cluster"))?;
        println!(
            "metric stage=cluster seq={} frames={} boxes={} elapsed_ms={}",
            seq.manifest.sequence_id,
            stats.frames,
            stats.boxes,
            started.elapsed().as_millis()
        );
        let started = std::time::Instant::now();
        let stats = stage_track(
            seq_dir,
            &boxes_init,
            &tracks_path,
            &config.tracker,
            TrackingMode::Initial,
        )
        .map_err(stage_err("track"))?;
        println!(
            "metric stage=track seq={} tracks={} boxes={} elapsed_ms={}",
            seq.manifest.sequence_id,
            stats.tracks,
            stats.boxes,
            started.elapsed().as_millis()
        );
        let started = std::time::Instant::now();
        let stats = stage_smooth(seq_dir, &tracks_path, &smooth_path, &config.smooth)
            .map_err(stage_err("smooth"))?;
        println!(
            "metric stage=smooth seq={} tracks={} boxes={} elapsed_ms={}",
            seq.manifest.sequence_id,
            stats.tracks,
            stats.boxes,
            started.elapsed().as_millis()
        );
    }
    let tracks = tracker::records_to_tracks(&read_boxes(&smooth_path)?)?;
    Ok(selftrain::build_pseudo_gt(
        &tracks,
        &seq.frames,
        config.include_coasted,
    ))
}

/// Self-training over one or more sequences: mines the initial database
/// where missing, then runs the scheduled rounds, writing
/// `pseudo_gt_round_<k>.txt` per round and `pseudo_gt.txt` at the end.
pub fn stage_selftrain(
    seq_dirs: &[PathBuf],
    out_dir: &Path,
    config: &PipelineConfig,
    detector_kind: &DetectorKind,
) -> Result<SelfTrainState> {
    if seq_dirs.is_empty() {
        return Err(Error::InvalidParam("no sequences to self-train on".into()));
    }
    let multi = seq_dirs.len() > 1;
    let mut seqs = Vec::new();
    for dir in seq_dirs {
        let manifest = SequenceManifest::load(dir)?;
        let frames = io::read_all_frames(&manifest)?;
        seqs.push(SelfTrainSequence { manifest, frames });
    }

    let mut state = SelfTrainState::default();
    for seq in &seqs {
        let out = seq_out_dir(out_dir, &seq.manifest.sequence_id, multi);
        let db = initial_database(seq, &out, config)?;
        state.dbs.insert(seq.manifest.sequence_id.clone(), db);
    }
    write_round_files(&state, out_dir, multi)?;

    let mut detector = detector_kind.build(out_dir, &config.cluster)?;
    let rounds_started = std::time::Instant::now();
    let st_config = config.selftrain_config();
    let final_state = selftrain::run_self_training(
        state,
        &st_config,
        detector.as_mut(),
        &seqs,
        |round_state| {
            println!(
                "metric stage=selftrain round={} boxes={} elapsed_ms={}",
                round_state.round,
                round_state.dbs.values().map(|d| d.box_count()).sum::<usize>(),
                rounds_started.elapsed().as_millis()
            );
            write_round_files(round_state, out_dir, multi)
        },
    )?;

    for seq in &seqs {
        let out = seq_out_dir(out_dir, &seq.manifest.sequence_id, multi);
        let db = final_state
            .dbs
            .get(&seq.manifest.sequence_id)
            .cloned()
            .unwrap_or_default();
        write_boxes(&db.records(), out.join("pseudo_gt.txt"))?;
    }
    Ok(final_state)
}

fn write_round_files(state: &SelfTrainState, out_dir: &Path, multi: bool) -> Result<()> {
    for (seq_id, db) in &state.dbs {
        let out = seq_out_dir(out_dir, seq_id, multi);
        std::fs::create_dir_all(&out)?;
        write_boxes(
            &db.records(),
            out.join(format!("pseudo_gt_round_{}.txt", state.round)),
        )?;
    }
    Ok(())
}

/// Evaluates predictions against ground truth, writing the report and the
/// PR-curve CSV. When the sequence is given and the ground truth carries
/// track ids, Moving/Still splits are reported too.
pub fn stage_eval(
    gt_file: &Path,
    pred_file: &Path,
    seq_dir: Option<&Path>,
    config: &EvalConfig,
    report_path: &Path,
    pr_csv_path: Option<&Path>,
) -> Result<String> {
    let gts = read_boxes(gt_file)?;
    let preds = read_boxes(pred_file)?;

    let mut results: Vec<(f64, Option<&str>, ApResult)> = Vec::new();
    let mut curves: Vec<(f64, ApResult)> = Vec::new();
    for &threshold in &config.iou_thresholds {
        let res = eval::average_precision(&preds, &gts, threshold, config)?;
        curves.push((threshold, res.clone()));
        results.push((threshold, None, res));
    }

    // Motion split when ground-truth speeds are derivable.
    if let Some(seq_dir) = seq_dir {
        let manifest = SequenceManifest::load(seq_dir)?;
        let frames = io::read_all_frames(&manifest)?;
        let poses = tracker::world_poses(&frames)?;
        let speeds = eval::track_speeds(&gts, &poses, manifest.frame_interval_s);
        match eval::split_moving_still(&gts, Some(&speeds), config.motion_split_threshold) {
            MotionSplit::Split { moving, still } => {
                for &threshold in &config.iou_thresholds {
                    let res = eval::average_precision_with_ignores(
                        &preds, &moving, &still, threshold, config,
                    )?;
                    results.push((threshold, Some("moving"), res));
                    let res = eval::average_precision_with_ignores(
                        &preds, &still, &moving, threshold, config,
                    )?;
                    results.push((threshold, Some("still"), res));
                }
            }
            MotionSplit::Movable(_) => {}
        }
    }

    let report = eval::format_report(&results, config);
    std::fs::write(report_path, &report)?;
    if let Some(path) = pr_csv_path {
        eval::write_pr_csv(&curves, path)?;
    }
    Ok(report)
}

fn stage_err(stage: &'static str) -> impl FnOnce(Error) -> Error {
    move |source| match source {
        // Keep the innermost stage attribution.
        already @ Error::Stage { .. } => already,
        other => Error::Stage {
            stage,
            source: Box::new(other),
        },
    }
}

/// Full pipeline over one sequence: cluster, track, smooth, self-train, and
/// (when ground truth is provided) evaluation of the final pseudo ground
/// truth. Stage failures abort with the stage name; artifacts written by
/// earlier stages are preserved.
pub fn run_pipeline(
    seq_dir: &Path,
    out_dir: &Path,
    gt_file: Option<&Path>,
    config: &PipelineConfig,
    detector_kind: &DetectorKind,
) -> Result<()> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("config.txt"), config.to_text())?;

    with_workers(config.workers, || -> Result<()> {
        // The self-train stage runs cluster/track/smooth itself when their
        // outputs are missing, using exactly the same stage functions.
        stage_selftrain(
            &[seq_dir.to_path_buf()],
            out_dir,
            config,
            detector_kind,
        )
        .map_err(stage_err("selftrain"))?;

        if let Some(gt) = gt_file {
            let report = stage_eval(
                gt,
                &out_dir.join("pseudo_gt.txt"),
                Some(seq_dir),
                &config.eval,
                &out_dir.join("report.txt"),
                Some(&out_dir.join("pr.csv")),
            )
            .map_err(stage_err("eval"))?;
            print!("{report}");
        }
        Ok(())
    })?
}

/// Reads every sequence directory under `root`: either `root` itself is a
/// sequence (has a manifest) or each child directory with a manifest is one.
pub fn discover_sequences(root: &Path) -> Result<Vec<PathBuf>> {
    if root.join("manifest").is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut seqs: Vec<PathBuf> = Vec::new();
    if root.is_dir() {
        for entry in std::fs::read_dir(root)? {
            let path = entry?.path();
            if path.is_dir() && path.join("manifest").is_file() {
                seqs.push(path);
            }
        }
    }
    seqs.sort();
    if seqs.is_empty() {
        return Err(Error::InvalidParam(format!(
            "no sequences found under {}",
            root.display()
        )));
    }
    Ok(seqs)
}

/// Initial-database builder shared by tests and the CLI, kept public for
/// desk experiments: mines, tracks, smooths one in-memory sequence.
pub fn mine_initial_tracks(
    frames: &[crate::geom::PointFrame],
    frame_interval_s: f64,
    config: &PipelineConfig,
) -> Result<Vec<tracker::Track>> {
    let candidates: Vec<Vec<Box3d>> = frames
        .par_iter()
        .map(|f| {
            cluster::mine_frame(f, &config.cluster, frame_interval_s, config.seed)
                .map(|v| v.into_iter().map(|fb| fb.bbox).collect())
        })
        .collect::<Result<_>>()?;
    let tracks = tracker::track_stage(frames, &candidates, &config.tracker, TrackingMode::Initial)?;
    let poses = tracker::world_poses(frames)?;
    tracks
        .iter()
        .map(|t| trackopt::optimize_track(t, &poses, &config.smooth, frame_interval_s))
        .collect()
}

/// In-memory variant of the initial pipeline returning the label database.
pub fn mine_initial_database(
    frames: &[crate::geom::PointFrame],
    frame_interval_s: f64,
    config: &PipelineConfig,
) -> Result<PseudoGtDatabase> {
    let tracks = mine_initial_tracks(frames, frame_interval_s, config)?;
    Ok(selftrain::build_pseudo_gt(
        &tracks,
        frames,
        config.include_coasted,
    ))
}

/// Convenience accessor for tests comparing runs: map of relative file path
/// to content bytes for every regular file under a directory.
pub fn dir_snapshot(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) -> Result<()> {
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(base, &path, out)?;
            } else {
                let rel = path
                    .strip_prefix(base)
                    .unwrap()
                    .to_string_lossy()
                    .into_owned();
                out.insert(rel, std::fs::read(&path)?);
            }
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out)?;
    Ok(out)
}
