//! Deterministic synthetic scenes with exact ego-motion, exact scene flow,
//! and ground-truth boxes.
//!
//! Everything the real preprocessing would estimate (ego-motion, per-point
//! flow, ground labels) is produced here in closed form, so downstream stages
//! can be verified against exact inputs. Trajectories are chains of
//! constant-curvature arcs: heading is continuous at segment joints and the
//! smoothing stage gets a target with genuinely small jerk.
//!
//! Determinism contract: a `WorldSpec` seed fully determines every sampled
//! output. Two generations from equal specs are byte-identical on disk.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

use crate::geom::{wrap_angle, Box3d, FlowVector, Point3, PointFrame, RigidTransform};
use crate::io::{write_boxes, write_frame, BoxRecord, SequenceManifest};
use crate::{Error, Result};

/// One constant-curvature leg of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArcSegment {
    /// Signed curvature in 1/m; 0 is a straight leg.
    pub curvature: f64,
    /// Speed along the arc in m/s, >= 0.
    pub speed: f64,
    /// Number of frame intervals this leg lasts.
    pub frames: usize,
}

/// Piecewise constant-curvature path. The pose beyond the last leg holds
/// still at the final waypoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub start_x: f64,
    pub start_y: f64,
    pub start_heading: f64,
    pub segments: Vec<ArcSegment>,
}

impl Trajectory {
    pub fn stationary(x: f64, y: f64, heading: f64) -> Self {
        Trajectory {
            start_x: x,
            start_y: y,
            start_heading: heading,
            segments: Vec::new(),
        }
    }

    pub fn straight(x: f64, y: f64, heading: f64, speed: f64, frames: usize) -> Self {
        Trajectory {
            start_x: x,
            start_y: y,
            start_heading: heading,
            segments: vec![ArcSegment {
                curvature: 0.0,
                speed,
                frames,
            }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.start_x.is_finite() && self.start_y.is_finite() && self.start_heading.is_finite())
        {
            return Err(Error::InvalidParam("trajectory start must be finite".into()));
        }
        for seg in &self.segments {
            if !(seg.speed.is_finite() && seg.speed >= 0.0) {
                return Err(Error::InvalidParam(format!(
                    "segment speed must be >= 0, got {}",
                    seg.speed
                )));
            }
            if !seg.curvature.is_finite() {
                return Err(Error::InvalidParam("segment curvature must be finite".into()));
            }
        }
        Ok(())
    }

    /// Pose of the body in world coordinates at frame `t` (time `t * dt`).
    pub fn pose_at(&self, t: usize, dt: f64) -> RigidTransform {
        let (mut x, mut y, mut heading) = (self.start_x, self.start_y, self.start_heading);
        let mut remaining = t;
        for seg in &self.segments {
            let steps = remaining.min(seg.frames);
            if steps > 0 {
                let tau = steps as f64 * dt;
                let (nx, ny, nh) = advance_arc(x, y, heading, seg.curvature, seg.speed, tau);
                x = nx;
                y = ny;
                heading = nh;
            }
            remaining -= steps;
            if remaining == 0 {
                break;
            }
        }
        RigidTransform::from_yaw_translation(wrap_angle(heading), x, y, 0.0)
    }

    /// World-frame speed in m/s over the interval starting at frame `t`.
    pub fn speed_at(&self, t: usize, dt: f64) -> f64 {
        let a = self.pose_at(t, dt).translation();
        let b = self.pose_at(t + 1, dt).translation();
        a.dist(&b) / dt
    }
}

fn advance_arc(x: f64, y: f64, heading: f64, curvature: f64, speed: f64, tau: f64) -> (f64, f64, f64) {
    let dist = speed * tau;
    if curvature.abs() < 1e-12 {
        (
            x + dist * heading.cos(),
            y + dist * heading.sin(),
            heading,
        )
    } else {
        let new_heading = heading + curvature * dist;
        (
            x + (new_heading.sin() - heading.sin()) / curvature,
            y + (heading.cos() - new_heading.cos()) / curvature,
            new_heading,
        )
    }
}

/// One simulated object: a cuboid shell following a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorSpec {
    /// (length, width, height) in meters, box sitting on the ground plane.
    pub size: (f64, f64, f64),
    pub trajectory: Trajectory,
    pub spawn_frame: usize,
    /// Exclusive: the actor is absent from this frame on.
    pub despawn_frame: usize,
    /// Zero velocity regardless of the trajectory's segments.
    pub movable_but_static: bool,
}

impl ActorSpec {
    pub fn validate(&self) -> Result<()> {
        let (l, w, h) = self.size;
        for d in [l, w, h] {
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::InvalidParam(format!(
                    "actor size must be positive, got ({l}, {w}, {h})"
                )));
            }
        }
        if self.despawn_frame <= self.spawn_frame {
            return Err(Error::InvalidParam(
                "actor despawn_frame must be after spawn_frame".into(),
            ));
        }
        self.trajectory.validate()
    }

    fn pose_at(&self, t: usize, dt: f64) -> RigidTransform {
        if self.movable_but_static {
            self.trajectory.pose_at(0, dt)
        } else {
            self.trajectory.pose_at(t, dt)
        }
    }

    pub fn active_at(&self, t: usize) -> bool {
        t >= self.spawn_frame && t < self.despawn_frame
    }
}

/// Full scene description; the seed determines all sampled outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldSpec {
    pub seed: u64,
    pub actors: Vec<ActorSpec>,
    pub ego: Trajectory,
    /// Static clutter density above the ground plane, points per m².
    pub background_density_per_m2: f64,
    /// Ground-plane return density, points per m² (0 disables).
    pub ground_density_per_m2: f64,
    /// Whether ground mask files are written for generated ground points.
    pub emit_ground_mask: bool,
    /// Sampling density on actor shells, points per m².
    pub points_per_actor_surface: f64,
    /// Gaussian position noise applied to every sampled point, meters.
    pub noise_sigma: f64,
    pub frame_count: usize,
    pub frame_interval_s: f64,
    /// Half-extent of the square world region used for background sampling.
    pub world_half_extent: f64,
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frame_count == 0 {
            return Err(Error::InvalidParam("frame_count must be positive".into()));
        }
        if !(self.frame_interval_s.is_finite() && self.frame_interval_s > 0.0) {
            return Err(Error::InvalidParam("frame_interval_s must be positive".into()));
        }
        if self.actors.is_empty()
            && self.background_density_per_m2 <= 0.0
            && self.ground_density_per_m2 <= 0.0
        {
            return Err(Error::InvalidParam(
                "empty world: no actors and no background".into(),
            ));
        }
        for (k, d) in [
            ("background_density_per_m2", self.background_density_per_m2),
            ("ground_density_per_m2", self.ground_density_per_m2),
            ("points_per_actor_surface", self.points_per_actor_surface),
            ("noise_sigma", self.noise_sigma),
            ("world_half_extent", self.world_half_extent),
        ] {
            if !(d.is_finite() && d >= 0.0) {
                return Err(Error::InvalidParam(format!("{k} must be >= 0, got {d}")));
            }
        }
        self.ego.validate()?;
        for a in &self.actors {
            a.validate()?;
        }
        Ok(())
    }
}

/// Where a generated point came from; kept in memory for verification, never
/// written to disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointSource {
    Actor(usize),
    Background,
    Ground,
}

#[derive(Debug, Clone)]
pub struct GeneratedWorld {
    pub frames: Vec<PointFrame>,
    pub gt_boxes: Vec<BoxRecord>,
    pub sources: Vec<Vec<PointSource>>,
    /// Ego pose per frame in world coordinates, indices 0..=frame_count.
    pub ego_poses: Vec<RigidTransform>,
}

pub(crate) fn derive_rng(seed: u64, salt: &[u64]) -> ChaCha8Rng {
    // splitmix64 over the seed and salt words.
    let mut state = seed;
    let mut mix = |v: u64| {
        state = state.wrapping_add(0x9e3779b97f4a7c15).wrapping_add(v);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    };
    let mut key = [0u8; 32];
    for (i, chunk) in key.chunks_exact_mut(8).enumerate() {
        let v = mix(salt.get(i).copied().unwrap_or(i as u64));
        chunk.copy_from_slice(&v.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Standard normal via Box-Muller; two uniform draws per sample.
pub(crate) fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Samples a point on the 5 exposed faces of a cuboid shell (no bottom),
/// in actor coordinates with z in [0, h].
fn sample_shell_point(rng: &mut ChaCha8Rng, l: f64, w: f64, h: f64) -> Point3 {
    let side_x = w * h; // front/back faces
    let side_y = l * h; // left/right faces
    let top = l * w;
    let total = 2.0 * side_x + 2.0 * side_y + top;
    let pick: f64 = rng.random_range(0.0..total);
    let u: f64 = rng.random_range(-0.5..0.5);
    let v: f64 = rng.random_range(0.0..1.0);
    if pick < side_x {
        Point3::new(l / 2.0, u * w, v * h)
    } else if pick < 2.0 * side_x {
        Point3::new(-l / 2.0, u * w, v * h)
    } else if pick < 2.0 * side_x + side_y {
        Point3::new(u * l, w / 2.0, v * h)
    } else if pick < 2.0 * side_x + 2.0 * side_y {
        Point3::new(u * l, -w / 2.0, v * h)
    } else {
        let v2: f64 = rng.random_range(-0.5..0.5);
        Point3::new(u * l, v2 * w, h)
    }
}

fn shell_area(l: f64, w: f64, h: f64) -> f64 {
    2.0 * w * h + 2.0 * l * h + l * w
}

/// Generates the whole scene in memory.
pub fn generate(spec: &WorldSpec) -> Result<GeneratedWorld> {
    spec.validate()?;
    let dt = spec.frame_interval_s;
    let n_frames = spec.frame_count;

    let ego_poses: Vec<RigidTransform> = (0..=n_frames).map(|t| spec.ego.pose_at(t, dt)).collect();

    // Static scenery is sampled once in world coordinates.
    let half = spec.world_half_extent;
    let area = (2.0 * half) * (2.0 * half);
    let mut bg_rng = derive_rng(spec.seed, &[0xb6, 0]);
    let n_bg = (spec.background_density_per_m2 * area).round() as usize;
    let background: Vec<Point3> = (0..n_bg)
        .map(|_| {
            Point3::new(
                bg_rng.random_range(-half..half),
                bg_rng.random_range(-half..half),
                bg_rng.random_range(0.3..3.0),
            )
        })
        .collect();
    let mut ground_rng = derive_rng(spec.seed, &[0x6d, 0]);
    let n_ground = (spec.ground_density_per_m2 * area).round() as usize;
    let ground: Vec<Point3> = (0..n_ground)
        .map(|_| {
            Point3::new(
                ground_rng.random_range(-half..half),
                ground_rng.random_range(-half..half),
                0.0,
            )
        })
        .collect();

    let mut frames = Vec::with_capacity(n_frames);
    let mut sources = Vec::with_capacity(n_frames);
    let mut gt_boxes = Vec::new();

    for t in 0..n_frames {
        let ego_from_world_t = ego_poses[t].inverse();
        let ego_from_world_next = ego_poses[t + 1].inverse();
        // Step transform: frame t+1 expressed in frame t.
        let pose_to_next = ego_from_world_t.compose(&ego_poses[t + 1]);
        // Rigid map of static scenery from ego(t) to ego(t+1) coordinates.
        let static_map = ego_from_world_next.compose(&ego_poses[t]);

        let mut points = Vec::new();
        let mut flow = Vec::new();
        let mut mask = Vec::new();
        let mut src = Vec::new();

        for (a_idx, actor) in spec.actors.iter().enumerate() {
            if !actor.active_at(t) {
                continue;
            }
            let (l, w, h) = actor.size;
            let world_from_actor_t = actor.pose_at(t, dt);
            let world_from_actor_next = actor.pose_at(t + 1, dt);
            // Rigid map of this actor's points from ego(t) to ego(t+1).
            let actor_map = ego_from_world_next
                .compose(&world_from_actor_next)
                .compose(&world_from_actor_t.inverse())
                .compose(&ego_poses[t]);
            let ego_from_actor = ego_from_world_t.compose(&world_from_actor_t);

            let n_points =
                (spec.points_per_actor_surface * shell_area(l, w, h)).round().max(1.0) as usize;
            let mut rng = derive_rng(spec.seed, &[0xac, t as u64, a_idx as u64]);
            for _ in 0..n_points {
                let local = sample_shell_point(&mut rng, l, w, h);
                let mut p = ego_from_actor.apply(&local);
                if spec.noise_sigma > 0.0 {
                    p.x += spec.noise_sigma * gauss(&mut rng);
                    p.y += spec.noise_sigma * gauss(&mut rng);
                    p.z += spec.noise_sigma * gauss(&mut rng);
                }
                let moved = actor_map.apply(&p);
                points.push(p);
                flow.push(FlowVector::new(moved.x - p.x, moved.y - p.y, moved.z - p.z));
                mask.push(false);
                src.push(PointSource::Actor(a_idx));
            }

            // Ground-truth box, centered at half height, in ego coordinates.
            let center_world = world_from_actor_t.apply(&Point3::new(0.0, 0.0, h / 2.0));
            let center = ego_from_world_t.apply(&center_world);
            let heading = wrap_angle(world_from_actor_t.yaw() - ego_poses[t].yaw());
            gt_boxes.push(BoxRecord {
                frame_index: t,
                track_id: Some(a_idx as u64),
                bbox: Box3d::new(center, l, w, h, heading, 1.0)?,
                is_pseudo: false,
                observed: true,
            });
        }

        let mut static_rng = derive_rng(spec.seed, &[0x57, t as u64]);
        let mut push_static = |p_world: &Point3| {
            let mut p = ego_from_world_t.apply(p_world);
            if spec.noise_sigma > 0.0 {
                p.x += spec.noise_sigma * gauss(&mut static_rng);
                p.y += spec.noise_sigma * gauss(&mut static_rng);
                p.z += spec.noise_sigma * gauss(&mut static_rng);
            }
            let moved = static_map.apply(&p);
            (
                p,
                FlowVector::new(moved.x - p.x, moved.y - p.y, moved.z - p.z),
            )
        };
        for p in &background {
            let (p_ego, f) = push_static(p);
            points.push(p_ego);
            flow.push(f);
            mask.push(false);
            src.push(PointSource::Background);
        }
        for p in &ground {
            let (p_ego, f) = push_static(p);
            points.push(p_ego);
            flow.push(f);
            mask.push(true);
            src.push(PointSource::Ground);
        }

        frames.push(PointFrame {
            timestamp_index: t,
            points,
            flow: Some(flow),
            ground_mask: if spec.emit_ground_mask { Some(mask) } else { None },
            pose_to_next: Some(pose_to_next),
        });
        sources.push(src);
    }

    Ok(GeneratedWorld {
        frames,
        gt_boxes,
        sources,
        ego_poses,
    })
}

/// Generates a scene and writes it as a sequence directory plus
/// `gt_boxes.txt`.
pub fn generate_to_dir(
    spec: &WorldSpec,
    out: impl AsRef<Path>,
) -> Result<(SequenceManifest, Vec<BoxRecord>)> {
    let out = out.as_ref();
    let world = generate(spec)?;
    // The directory name becomes the sequence id, so several generated
    // sequences can coexist in one self-training run.
    let sequence_id = out
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "synth".into());
    let manifest = SequenceManifest::new(out, sequence_id, spec.frame_count, spec.frame_interval_s)?;
    manifest.save()?;
    for frame in &world.frames {
        write_frame(&manifest, frame)?;
    }
    write_boxes(&world.gt_boxes, out.join("gt_boxes.txt"))?;
    Ok((manifest, world.gt_boxes))
}

/// Adds i.i.d. Gaussian noise (std `sigma`) to each flow component.
pub fn perturb_flow(flow: &[FlowVector], sigma: f64, seed: u64) -> Result<Vec<FlowVector>> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::InvalidParam(format!("sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(flow.to_vec());
    }
    let mut rng = derive_rng(seed, &[0xf1, 0]);
    Ok(flow
        .iter()
        .map(|f| {
            FlowVector::new(
                f.dx + sigma * gauss(&mut rng),
                f.dy + sigma * gauss(&mut rng),
                f.dz + sigma * gauss(&mut rng),
            )
        })
        .collect())
}

/// World-frame speed of an actor over the interval starting at frame `t`.
pub fn actor_world_speed(spec: &WorldSpec, actor_idx: usize, t: usize) -> f64 {
    let actor = &spec.actors[actor_idx];
    if actor.movable_but_static {
        return 0.0;
    }
    actor.trajectory.speed_at(t, spec.frame_interval_s)
}

// ---------------------------------------------------------------------------
// Declarative world file: key=value lines mirroring WorldSpec.
// ---------------------------------------------------------------------------

/// Serializes a spec to the `synth --spec` text format.
pub fn spec_to_text(spec: &WorldSpec) -> String {
    let mut s = String::new();
    let traj = |t: &Trajectory, prefix: &str, out: &mut String| {
        out.push_str(&format!(
            "{prefix}.start={} {} {}\n",
            t.start_x, t.start_y, t.start_heading
        ));
        for seg in &t.segments {
            out.push_str(&format!(
                "{prefix}.arc={} {} {}\n",
                seg.curvature, seg.speed, seg.frames
            ));
        }
    };
    s.push_str(&format!("seed={}\n", spec.seed));
    s.push_str(&format!("frame_count={}\n", spec.frame_count));
    s.push_str(&format!("frame_interval_s={}\n", spec.frame_interval_s));
    s.push_str(&format!("noise_sigma={}\n", spec.noise_sigma));
    s.push_str(&format!(
        "points_per_actor_surface={}\n",
        spec.points_per_actor_surface
    ));
    s.push_str(&format!(
        "background_density_per_m2={}\n",
        spec.background_density_per_m2
    ));
    s.push_str(&format!("ground_density_per_m2={}\n", spec.ground_density_per_m2));
    s.push_str(&format!("emit_ground_mask={}\n", spec.emit_ground_mask as u8));
    s.push_str(&format!("world_half_extent={}\n", spec.world_half_extent));
    traj(&spec.ego, "ego", &mut s);
    for (i, a) in spec.actors.iter().enumerate() {
        let (l, w, h) = a.size;
        s.push_str(&format!("actor.{i}.size={l} {w} {h}\n"));
        traj(&a.trajectory, &format!("actor.{i}"), &mut s);
        s.push_str(&format!("actor.{i}.spawn={}\n", a.spawn_frame));
        s.push_str(&format!("actor.{i}.despawn={}\n", a.despawn_frame));
        s.push_str(&format!("actor.{i}.static={}\n", a.movable_but_static as u8));
    }
    s
}

/// Parses the `synth --spec` text format, rejecting unknown keys.
pub fn spec_from_text(text: &str) -> Result<WorldSpec> {
    let bad = |line: usize, msg: String| Error::MalformedLine {
        path: "<world spec>".into(),
        line: line + 1,
        msg,
    };
    let mut spec = WorldSpec {
        seed: 0,
        actors: Vec::new(),
        ego: Trajectory::stationary(0.0, 0.0, 0.0),
        background_density_per_m2: 0.0,
        ground_density_per_m2: 0.0,
        emit_ground_mask: false,
        points_per_actor_surface: 6.0,
        noise_sigma: 0.0,
        frame_count: 0,
        frame_interval_s: 0.1,
        world_half_extent: 60.0,
    };

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(lineno, "expected key=value".into()))?;
        let (key, value) = (key.trim(), value.trim());
        let parse_f64 = |v: &str| -> Result<f64> {
            v.parse::<f64>()
                .map_err(|e| bad(lineno, format!("bad number `{v}`: {e}")))
        };
        let parse_usize = |v: &str| -> Result<usize> {
            v.parse::<usize>()
                .map_err(|e| bad(lineno, format!("bad integer `{v}`: {e}")))
        };
        let parse_bool = |v: &str| -> Result<bool> {
            match v {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(bad(lineno, format!("expected 0 or 1, got `{other}`"))),
            }
        };
        let parse_triple = |v: &str| -> Result<(f64, f64, f64)> {
            let parts: Vec<&str> = v.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(bad(lineno, format!("expected 3 numbers, got `{v}`")));
            }
            Ok((parse_f64(parts[0])?, parse_f64(parts[1])?, parse_f64(parts[2])?))
        };
        let parse_arc = |v: &str| -> Result<ArcSegment> {
            let parts: Vec<&str> = v.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(bad(lineno, format!("arc needs `curvature speed frames`, got `{v}`")));
            }
            Ok(ArcSegment {
                curvature: parse_f64(parts[0])?,
                speed: parse_f64(parts[1])?,
                frames: parse_usize(parts[2])?,
            })
        };

        if let Some(actor_key) = key.strip_prefix("actor.") {
            let (idx_str, field) = actor_key
                .split_once('.')
                .ok_or_else(|| bad(lineno, format!("bad actor key `{key}`")))?;
            let idx = parse_usize(idx_str)?;
            if idx > spec.actors.len() {
                return Err(bad(
                    lineno,
                    format!(
                        "actor indices must be contiguous; got {idx} before {}",
                        spec.actors.len()
                    ),
                ));
            }
            if idx == spec.actors.len() {
                spec.actors.push(ActorSpec {
                    size: (1.0, 1.0, 1.0),
                    trajectory: Trajectory::stationary(0.0, 0.0, 0.0),
                    spawn_frame: 0,
                    despawn_frame: usize::MAX,
                    movable_but_static: false,
                });
            }
            let actor = &mut spec.actors[idx];
            match field {
                "size" => actor.size = parse_triple(value)?,
                "start" => {
                    let (x, y, h) = parse_triple(value)?;
                    actor.trajectory.start_x = x;
                    actor.trajectory.start_y = y;
                    actor.trajectory.start_heading = h;
                }
                "arc" => actor.trajectory.segments.push(parse_arc(value)?),
                "spawn" => actor.spawn_frame = parse_usize(value)?,
                "despawn" => actor.despawn_frame = parse_usize(value)?,
                "static" => actor.movable_but_static = parse_bool(value)?,
                other => return Err(bad(lineno, format!("unknown actor field `{other}`"))),
            }
            continue;
        }
        if let Some(field) = key.strip_prefix("ego.") {
            match field {
                "start" => {
                    let (x, y, h) = parse_triple(value)?;
                    spec.ego.start_x = x;
                    spec.ego.start_y = y;
                    spec.ego.start_heading = h;
                }
                "arc" => spec.ego.segments.push(parse_arc(value)?),
                other => return Err(bad(lineno, format!("unknown ego field `{other}`"))),
            }
            continue;
        }
        match key {
            "seed" => {
                spec.seed = value
                    .parse::<u64>()
                    .map_err(|e| bad(lineno, format!("bad seed `{value}`: {e}")))?
            }
            "frame_count" => spec.frame_count = parse_usize(value)?,
            "frame_interval_s" => spec.frame_interval_s = parse_f64(value)?,
            "noise_sigma" => spec.noise_sigma = parse_f64(value)?,
            "points_per_actor_surface" => spec.points_per_actor_surface = parse_f64(value)?,
            "background_density_per_m2" => spec.background_density_per_m2 = parse_f64(value)?,
            "ground_density_per_m2" => spec.ground_density_per_m2 = parse_f64(value)?,
            "emit_ground_mask" => spec.emit_ground_mask = parse_bool(value)?,
            "world_half_extent" => spec.world_half_extent = parse_f64(value)?,
            other => return Err(bad(lineno, format!("unknown key `{other}`"))),
        }
    }
    // Clamp open-ended despawns to the frame count.
    for a in &mut spec.actors {
        if a.despawn_frame == usize::MAX {
            a.despawn_frame = spec.frame_count;
        }
    }
    spec.validate()?;
    Ok(spec)
}
