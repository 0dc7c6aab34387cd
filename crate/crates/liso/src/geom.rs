//! Geometry primitives shared by every pipeline stage.
//!
//! Conventions, fixed globally and relied on by the file formats:
//!
//! - right-handed coordinates, z up, angles in radians
//! - a box heading `theta` lies in `[-pi, pi)`; the box length `l` extends
//!   along the heading axis, width `w` across it, height `h` along z
//! - box `z` is the center of the box, not its bottom face
//! - rigid transforms are 4x4 row-major homogeneous matrices whose rotation
//!   block is orthonormal and whose last row is exactly `(0, 0, 0, 1)`

use crate::{Error, Result};

/// Orthonormality slack for rotation blocks (`R^T R = I` per entry).
pub const TRANSFORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn dist(&self, other: &Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    pub fn dist_bev(&self, other: &Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }
}

/// Per-point displacement between two consecutive frames, in meters per
/// frame interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowVector {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
}

impl FlowVector {
    pub fn new(dx: f64, dy: f64, dz: f64) -> Self {
        FlowVector { dx, dy, dz }
    }

    pub fn zero() -> Self {
        FlowVector {
            dx: 0.0,
            dy: 0.0,
            dz: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.dx.is_finite() && self.dy.is_finite() && self.dz.is_finite()
    }

    pub fn norm(&self) -> f64 {
        (self.dx * self.dx + self.dy * self.dy + self.dz * self.dz).sqrt()
    }
}

/// 4x4 homogeneous rigid transform (rotation + translation, meters).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    m: [[f64; 4]; 4],
}

impl RigidTransform {
    pub fn identity() -> Self {
        let mut m = [[0.0; 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        RigidTransform { m }
    }

    /// Validates the rotation block and the homogeneous row.
    pub fn from_matrix(m: [[f64; 4]; 4]) -> Result<Self> {
        for (i, row) in m.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        what: "transform matrix".into(),
                        index: i * 4 + j,
                    });
                }
            }
        }
        if m[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::InvalidParam(
                "transform last row must be exactly (0, 0, 0, 1)".into(),
            ));
        }
        // R^T R = I within tolerance.
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| m[k][i] * m[k][j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot - expect).abs() > TRANSFORM_TOL {
                    return Err(Error::InvalidParam(format!(
                        "rotation block not orthonormal: (R^T R)[{i}][{j}] = {dot}"
                    )));
                }
            }
        }
        Ok(RigidTransform { m })
    }

    /// Rotation about z by `yaw` followed by a translation.
    pub fn from_yaw_translation(yaw: f64, tx: f64, ty: f64, tz: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        RigidTransform {
            m: [
                [c, -s, 0.0, tx],
                [s, c, 0.0, ty],
                [0.0, 0.0, 1.0, tz],
                [0.0, 0.0, 0.0, 1.0],
            ],
        }
    }

    pub fn matrix(&self) -> &[[f64; 4]; 4] {
        &self.m
    }

    pub fn translation(&self) -> Point3 {
        Point3::new(self.m[0][3], self.m[1][3], self.m[2][3])
    }

    /// Yaw component of the rotation block (rotation of the x axis about z).
    pub fn yaw(&self) -> f64 {
        self.m[1][0].atan2(self.m[0][0])
    }

    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        let mut m = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                m[i][j] = (0..4).map(|k| self.m[i][k] * other.m[k][j]).sum();
            }
        }
        // Rounding can leave the homogeneous row off by epsilons; pin it.
        m[3] = [0.0, 0.0, 0.0, 1.0];
        RigidTransform { m }
    }

    /// Inverse via the transpose of the rotation block.
    pub fn inverse(&self) -> RigidTransform {
        let mut m = [[0.0; 4]; 4];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = self.m[j][i];
            }
        }
        for i in 0..3 {
            m[i][3] = -(0..3).map(|k| self.m[k][i] * self.m[k][3]).sum::<f64>();
        }
        m[3] = [0.0, 0.0, 0.0, 1.0];
        RigidTransform { m }
    }

    /// Applies the transform to a point: `R*p + t`.
    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3 {
            x: self.m[0][0] * p.x + self.m[0][1] * p.y + self.m[0][2] * p.z + self.m[0][3],
            y: self.m[1][0] * p.x + self.m[1][1] * p.y + self.m[1][2] * p.z + self.m[1][3],
            z: self.m[2][0] * p.x + self.m[2][1] * p.y + self.m[2][2] * p.z + self.m[2][3],
        }
    }

    /// Rotates a direction vector (no translation).
    pub fn apply_vector(&self, v: &FlowVector) -> FlowVector {
        FlowVector {
            dx: self.m[0][0] * v.dx + self.m[0][1] * v.dy + self.m[0][2] * v.dz,
            dy: self.m[1][0] * v.dx + self.m[1][1] * v.dy + self.m[1][2] * v.dz,
            dz: self.m[2][0] * v.dx + self.m[2][1] * v.dy + self.m[2][2] * v.dz,
        }
    }
}

/// Accumulates per-frame step transforms into absolute poses.
///
/// `steps[t]` carries frame `t+1` expressed in the frame of `t`; the result
/// holds `world_from_frame[t]` for every frame, with frame 0 as the world
/// origin. Output length is `steps.len() + 1`.
pub fn accumulate_poses(steps: &[RigidTransform]) -> Vec<RigidTransform> {
    let mut out = Vec::with_capacity(steps.len() + 1);
    out.push(RigidTransform::identity());
    for step in steps {
        let last = *out.last().unwrap();
        out.push(last.compose(step));
    }
    out
}

/// Wraps an angle into `[-pi, pi)`. Callers guarantee finiteness.
pub(crate) fn wrap_angle(theta: f64) -> f64 {
    debug_assert!(theta.is_finite());
    let two_pi = 2.0 * std::f64::consts::PI;
    let r = (theta + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    // rem_euclid can land exactly on +pi for inputs like theta = pi - eps.
    if r >= std::f64::consts::PI {
        r - two_pi
    } else {
        r
    }
}

/// Normalizes a heading to `[-pi, pi)`, rejecting non-finite input.
pub fn normalize_heading(theta: f64) -> Result<f64> {
    if !theta.is_finite() {
        return Err(Error::NonFinite {
            what: "heading".into(),
            index: 0,
        });
    }
    Ok(wrap_angle(theta))
}

/// Oriented 3D bounding box: center, extents, heading about z, confidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3d {
    pub center: Point3,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub heading: f64,
    pub confidence: f64,
}

impl Box3d {
    /// Validating constructor; normalizes the heading.
    pub fn new(
        center: Point3,
        length: f64,
        width: f64,
        height: f64,
        heading: f64,
        confidence: f64,
    ) -> Result<Self> {
        if !center.is_finite() {
            return Err(Error::NonFinite {
                what: "box center".into(),
                index: 0,
            });
        }
        for (i, d) in [length, width, height].iter().enumerate() {
            if !d.is_finite() || *d <= 0.0 {
                return Err(Error::InvalidParam(format!(
                    "box dimension {i} must be finite and positive, got {d}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::InvalidParam(format!(
                "box confidence must be in [0, 1], got {confidence}"
            )));
        }
        Ok(Box3d {
            center,
            length,
            width,
            height,
            heading: normalize_heading(heading)?,
            confidence,
        })
    }

    pub fn volume(&self) -> f64 {
        self.length * self.width * self.height
    }

    pub fn area_bev(&self) -> f64 {
        self.length * self.width
    }

    /// Corners of the BEV rectangle in counter-clockwise order; the first
    /// corner is front-left (positive along both box axes).
    pub fn corners_bev(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.heading.sin_cos();
        let hl = self.length / 2.0;
        let hw = self.width / 2.0;
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[lx, ly]| {
            [
                self.center.x + c * lx - s * ly,
                self.center.y + s * lx + c * ly,
            ]
        })
    }

    pub fn z_range(&self) -> (f64, f64) {
        (
            self.center.z - self.height / 2.0,
            self.center.z + self.height / 2.0,
        )
    }

    /// BEV membership test in box coordinates.
    pub fn contains_bev(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.heading.sin_cos();
        let dx = x - self.center.x;
        let dy = y - self.center.y;
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        u.abs() <= self.length / 2.0 && v.abs() <= self.width / 2.0
    }

    pub fn contains(&self, p: &Point3) -> bool {
        let (lo, hi) = self.z_range();
        p.z >= lo && p.z <= hi && self.contains_bev(p.x, p.y)
    }

    /// Copy with every extent grown by `margin` on each side.
    pub fn inflated(&self, margin: f64) -> Box3d {
        Box3d {
            length: self.length + 2.0 * margin,
            width: self.width + 2.0 * margin,
            height: self.height + 2.0 * margin,
            ..*self
        }
    }
}

/// One timestamped point cloud with optional per-point flow, ground mask,
/// and the ego step to the next frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PointFrame {
    pub timestamp_index: usize,
    pub points: Vec<Point3>,
    pub flow: Option<Vec<FlowVector>>,
    pub ground_mask: Option<Vec<bool>>,
    pub pose_to_next: Option<RigidTransform>,
}

impl PointFrame {
    /// Checks the per-channel length agreements and finiteness.
    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.points.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("frame {} points", self.timestamp_index),
                    index: i,
                });
            }
        }
        if let Some(flow) = &self.flow {
            if flow.len() != self.points.len() {
                return Err(Error::LengthMismatch {
                    what: format!("frame {} flow", self.timestamp_index),
                    path: Default::default(),
                    expected: self.points.len(),
                    got: flow.len(),
                });
            }
            for (i, f) in flow.iter().enumerate() {
                if !f.is_finite() {
                    return Err(Error::NonFinite {
                        what: format!("frame {} flow", self.timestamp_index),
                        index: i,
                    });
                }
            }
        }
        if let Some(mask) = &self.ground_mask {
            if mask.len() != self.points.len() {
                return Err(Error::LengthMismatch {
                    what: format!("frame {} ground mask", self.timestamp_index),
                    path: Default::default(),
                    expected: self.points.len(),
                    got: mask.len(),
                });
            }
        }
        Ok(())
    }
}

/// Shoelace area of a simple polygon, positive for counter-clockwise order.
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for i in 0..poly.len() {
        let [x0, y0] = poly[i];
        let [x1, y1] = poly[(i + 1) % poly.len()];
        twice += x0 * y1 - x1 * y0;
    }
    twice / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn transform_identity_case() {
        let t = RigidTransform::identity();
        let p = t.apply(&Point3::new(1.0, 2.0, 3.0));
        assert_eq!(p, Point3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn transform_pure_translation() {
        let t = RigidTransform::from_yaw_translation(0.0, 1.0, 0.0, 0.0);
        let p = t.apply(&Point3::new(0.0, 0.0, 0.0));
        assert_eq!(p, Point3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn transform_quarter_yaw() {
        let t = RigidTransform::from_yaw_translation(FRAC_PI_2, 0.0, 0.0, 0.0);
        let p = t.apply(&Point3::new(1.0, 0.0, 0.0));
        assert!((p.x - 0.0).abs() < 1e-9);
        assert!((p.y - 1.0).abs() < 1e-9);
        assert!((p.z - 0.0).abs() < 1e-9);
    }

    #[test]
    fn from_matrix_rejects_bad_last_row() {
        let mut m = [[0.0; 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        m[3][0] = 0.5;
        assert!(RigidTransform::from_matrix(m).is_err());
    }

    #[test]
    fn from_matrix_rejects_scaled_rotation() {
        let mut m = [[0.0; 4]; 4];
        m[0][0] = 2.0;
        m[1][1] = 1.0;
        m[2][2] = 1.0;
        m[3][3] = 1.0;
        assert!(RigidTransform::from_matrix(m).is_err());
    }

    #[test]
    fn normalize_heading_examples() {
        assert_eq!(normalize_heading(0.0).unwrap(), 0.0);
        assert!((normalize_heading(3.0 * PI / 2.0).unwrap() - (-FRAC_PI_2)).abs() < 1e-12);
        assert_eq!(normalize_heading(-PI).unwrap(), -PI);
        assert!(normalize_heading(f64::NAN).is_err());
        assert!(normalize_heading(f64::INFINITY).is_err());
    }

    #[test]
    fn corners_axis_aligned() {
        let b = Box3d::new(Point3::new(0.0, 0.0, 0.0), 2.0, 1.0, 1.0, 0.0, 1.0).unwrap();
        let c = b.corners_bev();
        assert_eq!(c[0], [1.0, 0.5]);
        assert_eq!(c[1], [-1.0, 0.5]);
        assert_eq!(c[2], [-1.0, -0.5]);
        assert_eq!(c[3], [1.0, -0.5]);
    }

    #[test]
    fn corners_quarter_turn() {
        let b = Box3d::new(Point3::new(0.0, 0.0, 0.0), 2.0, 1.0, 1.0, FRAC_PI_2, 1.0).unwrap();
        // l now extends along y: (x, y) extents become (w, l).
        for [x, y] in b.corners_bev() {
            assert!((x.abs() - 0.5).abs() < 1e-12);
            assert!((y.abs() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn corners_rotated_match_hand_rotation() {
        // Rotate the theta = 0 corners independently and compare.
        let theta = PI / 4.0;
        let b0 = Box3d::new(Point3::new(3.0, -2.0, 0.0), 2.0, 1.0, 1.0, 0.0, 1.0).unwrap();
        let b = Box3d {
            heading: theta,
            ..b0
        };
        let (s, c) = theta.sin_cos();
        for (got, [x0, y0]) in b.corners_bev().iter().zip(b0.corners_bev()) {
            let lx = x0 - b0.center.x;
            let ly = y0 - b0.center.y;
            let expect = [b0.center.x + c * lx - s * ly, b0.center.y + s * lx + c * ly];
            assert!((got[0] - expect[0]).abs() < 1e-12);
            assert!((got[1] - expect[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn box_validation_rejects_degenerate() {
        let c = Point3::new(0.0, 0.0, 0.0);
        assert!(Box3d::new(c, 0.0, 1.0, 1.0, 0.0, 1.0).is_err());
        assert!(Box3d::new(c, 1.0, -1.0, 1.0, 0.0, 1.0).is_err());
        assert!(Box3d::new(c, 1.0, 1.0, 1.0, 0.0, 1.5).is_err());
        assert!(Box3d::new(c, 1.0, 1.0, f64::NAN, 0.0, 1.0).is_err());
        let b = Box3d::new(c, 1.0, 1.0, 1.0, 3.0 * PI / 2.0, 1.0).unwrap();
        assert!((b.heading - (-FRAC_PI_2)).abs() < 1e-12);
    }

    #[test]
    fn accumulate_poses_chains_steps() {
        let step = RigidTransform::from_yaw_translation(0.0, 1.0, 0.0, 0.0);
        let poses = accumulate_poses(&[step, step, step]);
        assert_eq!(poses.len(), 4);
        assert!((poses[3].translation().x - 3.0).abs() < 1e-12);
    }

    fn arb_transform() -> impl Strategy<Value = RigidTransform> {
        (
            -PI..PI,
            -50.0..50.0f64,
            -50.0..50.0f64,
            -5.0..5.0f64,
        )
            .prop_map(|(yaw, x, y, z)| RigidTransform::from_yaw_translation(yaw, x, y, z))
    }

    proptest! {
        #[test]
        fn inverse_round_trip(t in arb_transform(),
                              x in -100.0..100.0f64,
                              y in -100.0..100.0f64,
                              z in -10.0..10.0f64) {
            let p = Point3::new(x, y, z);
            let back = t.inverse().apply(&t.apply(&p));
            prop_assert!(back.dist(&p) < 1e-6);
        }

        #[test]
        fn compose_with_inverse_is_identity(t in arb_transform()) {
            let id = t.compose(&t.inverse());
            for i in 0..4 {
                for j in 0..4 {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((id.matrix()[i][j] - expect).abs() < 1e-6);
                }
            }
        }

        #[test]
        fn corner_area_matches_extents(l in 0.1..20.0f64,
                                       w in 0.1..20.0f64,
                                       theta in -PI..PI,
                                       cx in -50.0..50.0f64,
                                       cy in -50.0..50.0f64) {
            let b = Box3d::new(Point3::new(cx, cy, 0.0), l, w, 1.0, theta, 1.0).unwrap();
            let area = polygon_area(&b.corners_bev());
            prop_assert!(area > 0.0, "corners must stay counter-clockwise");
            prop_assert!((area - l * w).abs() < 1e-9);
        }

        #[test]
        fn normalize_heading_idempotent(theta in -100.0..100.0f64) {
            let once = normalize_heading(theta).unwrap();
            let twice = normalize_heading(once).unwrap();
            prop_assert_eq!(once, twice);
            prop_assert!((-PI..PI).contains(&once));
        }
    }
}
