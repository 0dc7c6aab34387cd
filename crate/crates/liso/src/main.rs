use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use liso::pipeline::{self, parse_region, DetectorKind, PipelineConfig, StageStats};
use liso::tracker::TrackingMode;
use liso::{synth, Error};

/// Mines pseudo ground-truth 3D boxes from lidar sequences with motion cues
/// and refines them by trajectory-regularized self-training.
#[derive(Parser)]
#[command(name = "liso", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Configuration file (key=value lines) overriding the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Global random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for per-frame and per-track parallelism.
    #[arg(long)]
    workers: Option<usize>,
}

impl ConfigArgs {
    fn load(&self) -> liso::Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|_| Error::MissingFile(path.clone()))?;
                PipelineConfig::from_text(&text)?
            }
            None => PipelineConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(workers) = self.workers {
            cfg.workers = workers;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic sequence with exact flow and ego-motion.
    Synth {
        /// World description file.
        #[arg(long)]
        spec: PathBuf,
        /// Output sequence directory.
        #[arg(long)]
        out: PathBuf,
        /// Gaussian noise added to the written flow files, meters.
        #[arg(long, default_value_t = 0.0)]
        flow_sigma: f64,
        /// Seed for the flow perturbation stream.
        #[arg(long, default_value_t = 0)]
        flow_seed: u64,
    },
    /// Mine candidate boxes of moving objects for every frame.
    Cluster {
        #[arg(long)]
        seq: PathBuf,
        #[arg(long, default_value = "boxes_init.txt")]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// DBSCAN radius over the 6D feature.
        #[arg(long)]
        eps: Option<f64>,
        /// DBSCAN minimum neighborhood size.
        #[arg(long)]
        min_pts: Option<usize>,
        /// Static-speed threshold, m/s.
        #[arg(long)]
        static_speed: Option<f64>,
        /// Maximum length/width before discard.
        #[arg(long)]
        max_aspect: Option<f64>,
        /// Minimum BEV area before discard, m².
        #[arg(long)]
        min_area: Option<f64>,
        /// Minimum volume before discard, m³.
        #[arg(long)]
        min_volume: Option<f64>,
        /// Multiplier on flow features in the 6D distance.
        #[arg(long)]
        flow_scale: Option<f64>,
    },
    /// Track candidate boxes forward and reverse, join, post-filter.
    Track {
        #[arg(long)]
        seq: PathBuf,
        #[arg(long)]
        boxes: PathBuf,
        #[arg(long, default_value = "tracks.txt")]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// Greedy matching gate, meters.
        #[arg(long)]
        match_max_dist: Option<f64>,
        /// Coasting budget in steps.
        #[arg(long)]
        coast_steps: Option<usize>,
        /// Minimum track length in time steps.
        #[arg(long)]
        min_track_len: Option<usize>,
        /// Minimum median box confidence.
        #[arg(long)]
        min_median_conf: Option<f64>,
        /// initial or regeneration.
        #[arg(long, default_value = "initial")]
        mode: String,
    },
    /// Jerk-minimize track centers, realign headings, vote sizes.
    Smooth {
        #[arg(long)]
        seq: PathBuf,
        #[arg(long)]
        tracks: PathBuf,
        #[arg(long, default_value = "tracks_smooth.txt")]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// Regularizer weight.
        #[arg(long)]
        beta: Option<f64>,
        /// Minimum world path length to optimize, meters.
        #[arg(long)]
        min_track_length_m: Option<f64>,
        /// Optimizer step size.
        #[arg(long)]
        step_size: Option<f64>,
        /// Optimizer iterations.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Iterative self-training over one or more sequences.
    Selftrain {
        /// Sequence directory, or a directory of sequence directories.
        #[arg(long)]
        seqs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        rounds: Option<u32>,
        #[arg(long)]
        steps_per_round: Option<u32>,
        /// Drop detector weights every N rounds.
        #[arg(long)]
        weight_drop_every: Option<u32>,
        /// `mock` or `subprocess:<command>`.
        #[arg(long, default_value = "mock")]
        detector: String,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Evaluate predicted boxes against ground truth.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Sequence directory; enables the Moving/Still split via
        /// ground-truth speeds.
        #[arg(long)]
        seq: Option<PathBuf>,
        /// bev or 3d.
        #[arg(long)]
        iou_space: Option<String>,
        /// Comma-separated IoU thresholds.
        #[arg(long)]
        thresholds: Option<String>,
        /// Minimum precision/recall clip.
        #[arg(long)]
        min_pr_clip: Option<f64>,
        /// Evaluation region, e.g. 100x100 or 100x40; `none` disables.
        #[arg(long)]
        region: Option<String>,
        #[arg(long, default_value = "report.txt")]
        report: PathBuf,
        #[arg(long)]
        pr_curve: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Full run: cluster, track, smooth, self-train, evaluate.
    Pipeline {
        #[arg(long)]
        seq: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth boxes for the final evaluation.
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        rounds: Option<u32>,
        #[arg(long, default_value = "mock")]
        detector: String,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn print_stats(stage: &str, stats: &StageStats, started: std::time::Instant) {
    println!(
        "metric stage={stage} frames={} boxes={} tracks={} elapsed_ms={}",
        stats.frames,
        stats.boxes,
        stats.tracks,
        started.elapsed().as_millis()
    );
}

fn parse_cli() -> Result<Cli, ExitCode> {
    match Cli::try_parse() {
        Ok(cli) => Ok(cli),
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => Err(ExitCode::SUCCESS),
                // Usage problems are validation failures.
                _ => Err(ExitCode::from(1)),
            }
        }
    }
}

fn run(cli: Cli) -> liso::Result<()> {
    match cli.command {
        Command::Synth {
            spec,
            out,
            flow_sigma,
            flow_seed,
        } => {
            let text =
                std::fs::read_to_string(&spec).map_err(|_| Error::MissingFile(spec.clone()))?;
            let world_spec = synth::spec_from_text(&text)?;
            let (manifest, gt) = synth::generate_to_dir(&world_spec, &out)?;
            if flow_sigma > 0.0 {
                for t in 0..manifest.frame_count {
                    let mut frame = liso::io::read_frame(&manifest, t)?;
                    if let Some(flow) = frame.flow.take() {
                        frame.flow =
                            Some(synth::perturb_flow(&flow, flow_sigma, flow_seed ^ t as u64)?);
                        liso::io::write_frame(&manifest, &frame)?;
                    }
                }
            }
            println!(
                "metric stage=synth frames={} gt_boxes={}",
                manifest.frame_count,
                gt.len()
            );
            Ok(())
        }
        Command::Cluster {
            seq,
            out,
            config,
            eps,
            min_pts,
            static_speed,
            max_aspect,
            min_area,
            min_volume,
            flow_scale,
        } => {
            let mut cfg = config.load()?;
            if let Some(v) = eps {
                cfg.cluster.dbscan_eps = v;
            }
            if let Some(v) = min_pts {
                cfg.cluster.dbscan_min_pts = v;
            }
            if let Some(v) = static_speed {
                cfg.cluster.static_speed_threshold = v;
            }
            if let Some(v) = max_aspect {
                cfg.cluster.max_aspect = v;
            }
            if let Some(v) = min_area {
                cfg.cluster.min_area = v;
            }
            if let Some(v) = min_volume {
                cfg.cluster.min_volume = v;
            }
            if let Some(v) = flow_scale {
                cfg.cluster.flow_feature_scale = v;
            }
            cfg.validate()?;
            let started = std::time::Instant::now();
            let stats = pipeline::with_workers(cfg.workers, || {
                pipeline::stage_cluster(&seq, &out, &cfg.cluster, cfg.seed)
            })??;
            print_stats("cluster", &stats, started);
            Ok(())
        }
        Command::Track {
            seq,
            boxes,
            out,
            config,
            match_max_dist,
            coast_steps,
            min_track_len,
            min_median_conf,
            mode,
        } => {
            let mut cfg = config.load()?;
            if let Some(v) = match_max_dist {
                cfg.tracker.match_max_dist = v;
            }
            if let Some(v) = coast_steps {
                cfg.tracker.coast_steps = v;
            }
            if let Some(v) = min_track_len {
                cfg.tracker.min_track_len = v;
            }
            if let Some(v) = min_median_conf {
                cfg.tracker.min_median_conf = v;
            }
            cfg.validate()?;
            let mode = match mode.as_str() {
                "initial" => TrackingMode::Initial,
                "regeneration" => TrackingMode::Regeneration,
                other => {
                    return Err(Error::InvalidParam(format!(
                        "mode must be initial or regeneration, got `{other}`"
                    )))
                }
            };
            let started = std::time::Instant::now();
            let stats = pipeline::stage_track(&seq, &boxes, &out, &cfg.tracker, mode)?;
            print_stats("track", &stats, started);
            Ok(())
        }
        Command::Smooth {
            seq,
            tracks,
            out,
            config,
            beta,
            min_track_length_m,
            step_size,
            steps,
        } => {
            let mut cfg = config.load()?;
            if let Some(v) = beta {
                cfg.smooth.beta = v;
            }
            if let Some(v) = min_track_length_m {
                cfg.smooth.min_track_length_m = v;
            }
            if let Some(v) = step_size {
                cfg.smooth.step_size = v;
            }
            if let Some(v) = steps {
                cfg.smooth.steps = v;
            }
            cfg.validate()?;
            let started = std::time::Instant::now();
            let stats = pipeline::with_workers(cfg.workers, || {
                pipeline::stage_smooth(&seq, &tracks, &out, &cfg.smooth)
            })??;
            print_stats("smooth", &stats, started);
            Ok(())
        }
        Command::Selftrain {
            seqs,
            out,
            rounds,
            steps_per_round,
            weight_drop_every,
            detector,
            config,
        } => {
            let mut cfg = config.load()?;
            if let Some(v) = rounds {
                cfg.schedule.total_rounds = v;
            }
            if let Some(v) = steps_per_round {
                cfg.schedule.steps_per_round = v;
            }
            if let Some(v) = weight_drop_every {
                cfg.schedule.rounds_per_weight_drop = v;
            }
            cfg.validate()?;
            let kind = DetectorKind::parse(&detector)?;
            let seq_dirs = pipeline::discover_sequences(&seqs)?;
            let state = pipeline::with_workers(cfg.workers, || {
                pipeline::stage_selftrain(&seq_dirs, &out, &cfg, &kind)
            })??;
            println!(
                "metric stage=selftrain rounds={} boxes={}",
                state.round,
                state.dbs.values().map(|d| d.box_count()).sum::<usize>()
            );
            Ok(())
        }
        Command::Eval {
            gt,
            pred,
            seq,
            iou_space,
            thresholds,
            min_pr_clip,
            region,
            report,
            pr_curve,
            config,
        } => {
            let mut cfg = config.load()?;
            if let Some(space) = iou_space {
                cfg.apply("eval.iou_space", &space)?;
            }
            if let Some(t) = thresholds {
                cfg.apply("eval.thresholds", &t)?;
            }
            if let Some(c) = min_pr_clip {
                cfg.eval.min_pr_clip = Some(c);
            }
            if let Some(r) = region {
                cfg.eval.eval_region = if r == "none" {
                    None
                } else {
                    Some(parse_region(&r)?)
                };
            }
            cfg.validate()?;
            let text = pipeline::stage_eval(
                &gt,
                &pred,
                seq.as_deref(),
                &cfg.eval,
                &report,
                pr_curve.as_deref(),
            )?;
            print!("{text}");
            Ok(())
        }
        Command::Pipeline {
            seq,
            out,
            gt,
            rounds,
            detector,
            config,
        } => {
            let mut cfg = config.load()?;
            if let Some(v) = rounds {
                cfg.schedule.total_rounds = v;
            }
            cfg.validate()?;
            let kind = DetectorKind::parse(&detector)?;
            pipeline::run_pipeline(&seq, &out, gt.as_deref(), &cfg, &kind)
        }
    }
}

fn main() -> ExitCode {
    let cli = match parse_cli() {
        Ok(cli) => cli,
        Err(code) => return code,
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            if e.is_validation() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
