//! On-disk formats for sequences and box sets.
//!
//! A sequence directory looks like:
//!
//! ```text
//! <seq>/manifest            key=value: sequence_id, frame_count, frame_interval_s
//! <seq>/points/%06d.bin     little-endian float32 triplets (x, y, z), required
//! <seq>/flow/%06d.bin       little-endian float32 triplets (dx, dy, dz), optional
//! <seq>/poses/%06d.txt      16 whitespace-separated decimals, row-major, optional
//! <seq>/ground/%06d.bin     one byte per point, 0 or 1, optional
//! ```
//!
//! Optional channels are present for a frame iff the file exists. Box sets are
//! line-delimited text files with a fixed header; all floats are printed with
//! the shortest representation that round-trips, so read-after-write is
//! bit-exact. Readers never silently truncate: any structural anomaly is an
//! error with a line number where one makes sense.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::geom::{Box3d, FlowVector, Point3, PointFrame, RigidTransform};
use crate::{Error, Result};

/// Header line of every box file, naming the record columns.
pub const BOX_FILE_HEADER: &str =
    "frame_index track_id x y z length width height heading confidence is_pseudo observed";

/// Describes one sequence directory and the frame file layout within it.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceManifest {
    pub root: PathBuf,
    pub sequence_id: String,
    pub frame_count: usize,
    /// Seconds between consecutive frames; the time base for all derivatives.
    pub frame_interval_s: f64,
}

impl SequenceManifest {
    pub fn new(root: impl Into<PathBuf>, sequence_id: impl Into<String>, frame_count: usize, frame_interval_s: f64) -> Result<Self> {
        let m = SequenceManifest {
            root: root.into(),
            sequence_id: sequence_id.into(),
            frame_count,
            frame_interval_s,
        };
        m.check_params()?;
        Ok(m)
    }

    fn check_params(&self) -> Result<()> {
        if self.frame_count == 0 {
            return Err(Error::InvalidParam("frame_count must be positive".into()));
        }
        if !(self.frame_interval_s.is_finite() && self.frame_interval_s > 0.0) {
            return Err(Error::InvalidParam(format!(
                "frame_interval_s must be positive, got {}",
                self.frame_interval_s
            )));
        }
        Ok(())
    }

    /// Reads `<dir>/manifest`.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("manifest");
        if !path.is_file() {
            return Err(Error::MissingFile(path));
        }
        let mut sequence_id = None;
        let mut frame_count = None;
        let mut frame_interval_s = None;
        for (lineno, line) in fs::read_to_string(&path)?.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::MalformedLine {
                path: path.clone(),
                line: lineno + 1,
                msg: "expected key=value".into(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |msg: String| Error::MalformedLine {
                path: path.clone(),
                line: lineno + 1,
                msg,
            };
            match key {
                "sequence_id" => sequence_id = Some(value.to_string()),
                "frame_count" => {
                    frame_count =
                        Some(value.parse::<usize>().map_err(|e| bad(format!("frame_count: {e}")))?)
                }
                "frame_interval_s" => {
                    frame_interval_s = Some(
                        value
                            .parse::<f64>()
                            .map_err(|e| bad(format!("frame_interval_s: {e}")))?,
                    )
                }
                other => return Err(bad(format!("unknown manifest key `{other}`"))),
            }
        }
        let missing = |what: &str| Error::InvalidParam(format!("manifest missing `{what}` ({})", path.display()));
        SequenceManifest::new(
            dir,
            sequence_id.ok_or_else(|| missing("sequence_id"))?,
            frame_count.ok_or_else(|| missing("frame_count"))?,
            frame_interval_s.ok_or_else(|| missing("frame_interval_s"))?,
        )
    }

    /// Writes `<root>/manifest`, creating the directory if needed.
    pub fn save(&self) -> Result<()> {
        self.check_params()?;
        fs::create_dir_all(&self.root)?;
        let text = format!(
            "sequence_id={}\nframe_count={}\nframe_interval_s={}\n",
            self.sequence_id, self.frame_count, self.frame_interval_s
        );
        fs::write(self.root.join("manifest"), text)?;
        Ok(())
    }

    pub fn points_path(&self, t: usize) -> PathBuf {
        self.root.join("points").join(format!("{t:06}.bin"))
    }

    pub fn flow_path(&self, t: usize) -> PathBuf {
        self.root.join("flow").join(format!("{t:06}.bin"))
    }

    pub fn pose_path(&self, t: usize) -> PathBuf {
        self.root.join("poses").join(format!("{t:06}.txt"))
    }

    pub fn ground_path(&self, t: usize) -> PathBuf {
        self.root.join("ground").join(format!("{t:06}.bin"))
    }

    fn check_frame_index(&self, t: usize) -> Result<()> {
        if t >= self.frame_count {
            return Err(Error::InvalidParam(format!(
                "frame index {t} out of range (frame_count {})",
                self.frame_count
            )));
        }
        Ok(())
    }

    /// Reads every file of all frames, verifying lengths and finiteness.
    pub fn validate(&self) -> Result<()> {
        self.check_params()?;
        for t in 0..self.frame_count {
            read_frame(self, t)?;
        }
        Ok(())
    }
}

fn read_f32_triplets(path: &Path, what: &str) -> Result<Vec<[f64; 3]>> {
    let bytes = fs::read(path)?;
    if bytes.len() % 12 != 0 {
        return Err(Error::LengthMismatch {
            what: format!("{what} byte size (must be a multiple of 12)"),
            path: path.to_path_buf(),
            expected: bytes.len() / 12 * 12,
            got: bytes.len(),
        });
    }
    let mut out = Vec::with_capacity(bytes.len() / 12);
    for (i, chunk) in bytes.chunks_exact(12).enumerate() {
        let mut v = [0.0f64; 3];
        for (j, c) in chunk.chunks_exact(4).enumerate() {
            let f = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            if !f.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("{what} ({})", path.display()),
                    index: i * 3 + j,
                });
            }
            v[j] = f as f64;
        }
        out.push(v);
    }
    Ok(out)
}

fn write_f32_triplets(path: &Path, rows: impl Iterator<Item = [f64; 3]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut buf = Vec::new();
    for row in rows {
        for v in row {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

fn read_pose(path: &Path) -> Result<RigidTransform> {
    let text = fs::read_to_string(path)?;
    let values: Vec<f64> = text
        .split_whitespace()
        .map(|tok| {
            tok.parse::<f64>().map_err(|e| Error::MalformedLine {
                path: path.to_path_buf(),
                line: 1,
                msg: format!("bad pose entry `{tok}`: {e}"),
            })
        })
        .collect::<Result<_>>()?;
    if values.len() != 16 {
        return Err(Error::LengthMismatch {
            what: "pose entries".into(),
            path: path.to_path_buf(),
            expected: 16,
            got: values.len(),
        });
    }
    let mut m = [[0.0; 4]; 4];
    for (i, v) in values.iter().enumerate() {
        m[i / 4][i % 4] = *v;
    }
    RigidTransform::from_matrix(m)
}

fn write_pose(path: &Path, pose: &RigidTransform) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut text = String::new();
    for row in pose.matrix() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        text.push_str(&cells.join(" "));
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// Reads one fully populated frame. Optional channels are `None` iff their
/// files are absent.
pub fn read_frame(manifest: &SequenceManifest, t: usize) -> Result<PointFrame> {
    manifest.check_frame_index(t)?;
    let points_path = manifest.points_path(t);
    if !points_path.is_file() {
        return Err(Error::MissingFile(points_path));
    }
    let points: Vec<Point3> = read_f32_triplets(&points_path, "points")?
        .into_iter()
        .map(|[x, y, z]| Point3::new(x, y, z))
        .collect();

    let flow_path = manifest.flow_path(t);
    let flow = if flow_path.is_file() {
        let rows = read_f32_triplets(&flow_path, "flow")?;
        if rows.len() != points.len() {
            return Err(Error::LengthMismatch {
                what: format!("frame {t} flow rows"),
                path: flow_path,
                expected: points.len(),
                got: rows.len(),
            });
        }
        Some(
            rows.into_iter()
                .map(|[dx, dy, dz]| FlowVector::new(dx, dy, dz))
                .collect(),
        )
    } else {
        None
    };

    let ground_path = manifest.ground_path(t);
    let ground_mask = if ground_path.is_file() {
        let bytes = fs::read(&ground_path)?;
        if bytes.len() != points.len() {
            return Err(Error::LengthMismatch {
                what: format!("frame {t} ground mask"),
                path: ground_path.clone(),
                expected: points.len(),
                got: bytes.len(),
            });
        }
        let mut mask = Vec::with_capacity(bytes.len());
        for (i, b) in bytes.iter().enumerate() {
            match b {
                0 => mask.push(false),
                1 => mask.push(true),
                other => {
                    return Err(Error::MalformedLine {
                        path: ground_path,
                        line: i + 1,
                        msg: format!("ground mask byte must be 0 or 1, got {other}"),
                    })
                }
            }
        }
        Some(mask)
    } else {
        None
    };

    let pose_path = manifest.pose_path(t);
    let pose_to_next = if pose_path.is_file() {
        Some(read_pose(&pose_path)?)
    } else {
        None
    };

    let frame = PointFrame {
        timestamp_index: t,
        points,
        flow,
        ground_mask,
        pose_to_next,
    };
    frame.validate()?;
    Ok(frame)
}

/// Writes all present channels of a frame under the manifest layout.
pub fn write_frame(manifest: &SequenceManifest, frame: &PointFrame) -> Result<()> {
    manifest.check_frame_index(frame.timestamp_index)?;
    frame.validate()?;
    let t = frame.timestamp_index;
    write_f32_triplets(
        &manifest.points_path(t),
        frame.points.iter().map(|p| [p.x, p.y, p.z]),
    )?;
    if let Some(flow) = &frame.flow {
        write_f32_triplets(
            &manifest.flow_path(t),
            flow.iter().map(|f| [f.dx, f.dy, f.dz]),
        )?;
    }
    if let Some(mask) = &frame.ground_mask {
        let path = manifest.ground_path(t);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let bytes: Vec<u8> = mask.iter().map(|&g| g as u8).collect();
        fs::write(path, bytes)?;
    }
    if let Some(pose) = &frame.pose_to_next {
        write_pose(&manifest.pose_path(t), pose)?;
    }
    Ok(())
}

/// Reads every frame of a sequence in order.
pub fn read_all_frames(manifest: &SequenceManifest) -> Result<Vec<PointFrame>> {
    (0..manifest.frame_count)
        .map(|t| read_frame(manifest, t))
        .collect()
}

/// One serialized box with its provenance flags.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxRecord {
    pub frame_index: usize,
    pub track_id: Option<u64>,
    pub bbox: Box3d,
    /// Machine-generated label (as opposed to ground truth).
    pub is_pseudo: bool,
    /// False for coasted tracker entries that were never observed.
    pub observed: bool,
}

impl BoxRecord {
    pub fn new(frame_index: usize, track_id: Option<u64>, bbox: Box3d, is_pseudo: bool) -> Self {
        BoxRecord {
            frame_index,
            track_id,
            bbox,
            is_pseudo,
            observed: true,
        }
    }

    fn sort_key(&self) -> (usize, Option<u64>) {
        (self.frame_index, self.track_id)
    }
}

/// Writes records sorted by `(frame_index, track_id)`; the sort is stable so
/// records with equal keys keep their input order.
pub fn write_boxes(records: &[BoxRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut sorted: Vec<&BoxRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.sort_key());
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{BOX_FILE_HEADER}")?;
    for r in sorted {
        let track = match r.track_id {
            Some(id) => id.to_string(),
            None => "-".to_string(),
        };
        let b = &r.bbox;
        writeln!(
            w,
            "{} {} {} {} {} {} {} {} {} {} {} {}",
            r.frame_index,
            track,
            b.center.x,
            b.center.y,
            b.center.z,
            b.length,
            b.width,
            b.height,
            b.heading,
            b.confidence,
            r.is_pseudo as u8,
            r.observed as u8,
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a box file, reporting malformed lines with their line numbers.
pub fn read_boxes(path: impl AsRef<Path>) -> Result<Vec<BoxRecord>> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let reader = BufReader::new(fs::File::open(path)?);
    let mut records = Vec::new();
    let mut lines = reader.lines().enumerate();

    let bad = |line: usize, msg: String| Error::MalformedLine {
        path: path.to_path_buf(),
        line: line + 1,
        msg,
    };

    match lines.next() {
        Some((_, Ok(header))) if header == BOX_FILE_HEADER => {}
        Some((i, Ok(other))) => return Err(bad(i, format!("bad header `{other}`"))),
        Some((_, Err(e))) => return Err(e.into()),
        None => return Err(bad(0, "empty file (missing header)".into())),
    }

    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 12 {
            return Err(bad(i, format!("expected 12 fields, got {}", fields.len())));
        }
        let frame_index: usize = fields[0]
            .parse()
            .map_err(|e| bad(i, format!("frame_index: {e}")))?;
        let track_id = if fields[1] == "-" {
            None
        } else {
            Some(
                fields[1]
                    .parse::<u64>()
                    .map_err(|e| bad(i, format!("track_id: {e}")))?,
            )
        };
        let mut floats = [0.0f64; 8];
        for (k, f) in floats.iter_mut().enumerate() {
            *f = fields[2 + k]
                .parse()
                .map_err(|e| bad(i, format!("field {}: {e}", 2 + k)))?;
        }
        let flag = |idx: usize| -> Result<bool> {
            match fields[idx] {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(bad(i, format!("flag field {idx} must be 0 or 1, got `{other}`"))),
            }
        };
        let bbox = Box3d::new(
            Point3::new(floats[0], floats[1], floats[2]),
            floats[3],
            floats[4],
            floats[5],
            floats[6],
            floats[7],
        )
        .map_err(|e| bad(i, format!("invalid box: {e}")))?;
        records.push(BoxRecord {
            frame_index,
            track_id,
            bbox,
            is_pseudo: flag(10)?,
            observed: flag(11)?,
        });
    }
    Ok(records)
}
