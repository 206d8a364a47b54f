//! Value types and exact geometric predicates.
//!
//! Frames: the LiDAR (velodyne) frame is right-handed with `z` up, `x` forward.
//! Boxes live in that frame and rotate about `z` only. The camera frame is used
//! only inside [`Calibration::project`].
//!
//! Box-local axes: `x` runs along the length `l` (heading), `y` along the width
//! `w`, `z` along the height `h`. Corner order returned by [`Box3::corners`]:
//!
//! ```text
//!   bottom (z = -h/2), counterclockwise seen from above, then top (z = +h/2)
//!
//!         y
//!         ^
//!     1 ------ 0        0: (+l/2, +w/2)   4: same, top
//!     |        |  --> x 1: (-l/2, +w/2)   5
//!     2 ------ 3        2: (-l/2, -w/2)   6
//!                       3: (+l/2, -w/2)   7
//! ```

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use thiserror::Error;

/// Membership slack for points lying exactly on a box face (meters).
pub const FACE_EPS: f64 = 1e-9;

/// Polygon intersection areas below this are treated as empty.
pub const AREA_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point lies behind the camera (depth {0})")]
    BehindCamera(f64),
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("invalid calibration: {0}")]
    InvalidCalibration(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Rotate about the vertical axis by `angle` radians.
    pub fn rotate_z(self, angle: f64) -> Vec3 {
        let (s, c) = angle.sin_cos();
        Vec3::new(c * self.x - s * self.y, s * self.x + c * self.y, self.z)
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, k: f64) -> Vec3 {
        Vec3::new(self.x * k, self.y * k, self.z * k)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Wrap an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Oriented 3D box with yaw-only rotation. Dimensions follow the `[h, l, w]` order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3 {
    pub center: Vec3,
    pub h: f64,
    pub l: f64,
    pub w: f64,
    pub yaw: f64,
}

impl Box3 {
    /// Validating constructor; `yaw` is wrapped into `(-π, π]`.
    pub fn new(center: Vec3, h: f64, l: f64, w: f64, yaw: f64) -> Result<Self, GeometryError> {
        if !center.is_finite() || !yaw.is_finite() {
            return Err(GeometryError::InvalidBox("non-finite center or yaw".into()));
        }
        if !(h > 0.0 && l > 0.0 && w > 0.0) || !(h.is_finite() && l.is_finite() && w.is_finite()) {
            return Err(GeometryError::InvalidBox(format!(
                "dimensions must be positive, got h={h} l={l} w={w}"
            )));
        }
        Ok(Self { center, h, l, w, yaw: wrap_angle(yaw) })
    }

    pub fn dims(&self) -> [f64; 3] {
        [self.h, self.l, self.w]
    }

    pub fn volume(&self) -> f64 {
        self.h * self.l * self.w
    }

    pub fn bottom(&self) -> f64 {
        self.center.z - 0.5 * self.h
    }

    pub fn top(&self) -> f64 {
        self.center.z + 0.5 * self.h
    }

    /// Unit heading (length axis) in the horizontal plane.
    pub fn heading(&self) -> Vec3 {
        Vec3::new(self.yaw.cos(), self.yaw.sin(), 0.0)
    }

    pub fn to_local(&self, p: Vec3) -> Vec3 {
        (p - self.center).rotate_z(-self.yaw)
    }

    pub fn to_world(&self, local: Vec3) -> Vec3 {
        local.rotate_z(self.yaw) + self.center
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let (hl, hw, hh) = (0.5 * self.l, 0.5 * self.w, 0.5 * self.h);
        let xy = [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)];
        let mut out = [Vec3::ZERO; 8];
        for (i, &(x, y)) in xy.iter().enumerate() {
            out[i] = self.to_world(Vec3::new(x, y, -hh));
            out[i + 4] = self.to_world(Vec3::new(x, y, hh));
        }
        out
    }

    /// Inverse of [`Box3::corners`].
    pub fn from_corners(c: &[Vec3; 8]) -> Result<Self, GeometryError> {
        let center = c.iter().fold(Vec3::ZERO, |acc, &p| acc + p) * 0.125;
        let along = c[0] - c[1];
        let across = c[1] - c[2];
        let up = c[4] - c[0];
        Box3::new(center, up.norm(), along.norm(), across.norm(), along.y.atan2(along.x))
    }

    /// Footprint rectangle as a counterclockwise polygon `(x, y)`.
    pub fn footprint(&self) -> [[f64; 2]; 4] {
        let c = self.corners();
        [[c[0].x, c[0].y], [c[1].x, c[1].y], [c[2].x, c[2].y], [c[3].x, c[3].y]]
    }

    /// Inclusive point membership evaluated in the box frame.
    pub fn contains(&self, p: Vec3) -> bool {
        let q = self.to_local(p);
        q.x.abs() <= 0.5 * self.l + FACE_EPS
            && q.y.abs() <= 0.5 * self.w + FACE_EPS
            && q.z.abs() <= 0.5 * self.h + FACE_EPS
    }

    /// Same box with the given dimensions scaled about the center.
    pub fn scaled(&self, kh: f64, kl: f64, kw: f64) -> Box3 {
        Box3 { h: self.h * kh, l: self.l * kl, w: self.w * kw, ..*self }
    }

    /// Rigid motion: rotate about the world vertical axis through the origin, then translate.
    pub fn transformed(&self, yaw: f64, t: Vec3) -> Box3 {
        Box3 { center: self.center.rotate_z(yaw) + t, yaw: wrap_angle(self.yaw + yaw), ..*self }
    }
}

/// Axis-aligned image rectangle in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box2 {
    pub u_min: f64,
    pub v_min: f64,
    pub u_max: f64,
    pub v_max: f64,
}

impl Box2 {
    pub fn new(u_min: f64, v_min: f64, u_max: f64, v_max: f64) -> Result<Self, GeometryError> {
        if !(u_min < u_max && v_min < v_max) {
            return Err(GeometryError::InvalidBox(format!(
                "degenerate 2D box ({u_min}, {v_min}, {u_max}, {v_max})"
            )));
        }
        Ok(Self { u_min, v_min, u_max, v_max })
    }

    pub fn height(&self) -> f64 {
        self.v_max - self.v_min
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= self.u_min && u <= self.u_max && v >= self.v_min && v <= self.v_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub pos: Vec3,
    pub reflectance: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point>,
}

impl PointCloud {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_positions<I: IntoIterator<Item = Vec3>>(it: I) -> Self {
        Self { points: it.into_iter().map(|pos| Point { pos, reflectance: 0.0 }).collect() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, pos: Vec3, reflectance: f64) {
        self.points.push(Point { pos, reflectance });
    }

    pub fn positions(&self) -> impl Iterator<Item = Vec3> + '_ {
        self.points.iter().map(|p| p.pos)
    }

    pub fn extend(&mut self, other: &PointCloud) {
        self.points.extend_from_slice(&other.points);
    }
}

type Mat3 = [[f64; 3]; 3];

fn mat3_vec(m: &Mat3, v: Vec3) -> Vec3 {
    Vec3::new(
        m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
        m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
        m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
    )
}

fn mat3_t_vec(m: &Mat3, v: Vec3) -> Vec3 {
    Vec3::new(
        m[0][0] * v.x + m[1][0] * v.y + m[2][0] * v.z,
        m[0][1] * v.x + m[1][1] * v.y + m[2][1] * v.z,
        m[0][2] * v.x + m[1][2] * v.y + m[2][2] * v.z,
    )
}

fn det3(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn check_orthonormal(name: &str, m: &Mat3) -> Result<(), GeometryError> {
    for i in 0..3 {
        for j in 0..3 {
            let d: f64 = (0..3).map(|k| m[k][i] * m[k][j]).sum();
            let expect = if i == j { 1.0 } else { 0.0 };
            if (d - expect).abs() > 1e-6 {
                return Err(GeometryError::InvalidCalibration(format!("{name} is not orthonormal")));
            }
        }
    }
    Ok(())
}

/// Camera model in the KITTI convention: `P2 · R0_rect · Tr_velo_to_cam`.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    /// 3×4 projection into pixels.
    pub cam_projection: [[f64; 4]; 3],
    /// LiDAR → camera rotation.
    pub rotation: Mat3,
    /// LiDAR → camera translation (m).
    pub translation: Vec3,
    /// Rectifying rotation applied after the rigid transform.
    pub rectification: Mat3,
}

impl Calibration {
    pub fn new(
        cam_projection: [[f64; 4]; 3],
        rotation: Mat3,
        translation: Vec3,
        rectification: Mat3,
    ) -> Result<Self, GeometryError> {
        check_orthonormal("lidar_to_cam rotation", &rotation)?;
        check_orthonormal("rectification", &rectification)?;
        let p = &cam_projection;
        let rank3 = (0..4).any(|skip| {
            let cols: Vec<usize> = (0..4).filter(|&c| c != skip).collect();
            let m = [
                [p[0][cols[0]], p[0][cols[1]], p[0][cols[2]]],
                [p[1][cols[0]], p[1][cols[1]], p[1][cols[2]]],
                [p[2][cols[0]], p[2][cols[1]], p[2][cols[2]]],
            ];
            det3(&m).abs() > 1e-12
        });
        if !rank3 {
            return Err(GeometryError::InvalidCalibration("projection matrix rank < 3".into()));
        }
        Ok(Self { cam_projection, rotation, translation, rectification })
    }

    /// Everything identity: projection `[I | 0]`, no rigid transform.
    pub fn identity() -> Self {
        let i3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        Self {
            cam_projection: [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]],
            rotation: i3,
            translation: Vec3::ZERO,
            rectification: i3,
        }
    }

    /// Pinhole camera co-located with the LiDAR, looking along LiDAR `+x`
    /// (camera `x` = −LiDAR `y`, camera `y` = −LiDAR `z`, camera `z` = LiDAR `x`).
    pub fn pinhole_for_lidar(focal: f64, cu: f64, cv: f64) -> Self {
        Self {
            cam_projection: [[focal, 0.0, cu, 0.0], [0.0, focal, cv, 0.0], [0.0, 0.0, 1.0, 0.0]],
            rotation: [[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]],
            translation: Vec3::ZERO,
            rectification: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    /// LiDAR point → rectified camera frame.
    pub fn lidar_to_rect(&self, p: Vec3) -> Vec3 {
        mat3_vec(&self.rectification, mat3_vec(&self.rotation, p) + self.translation)
    }

    /// Rectified camera frame → LiDAR point.
    pub fn rect_to_lidar(&self, q: Vec3) -> Vec3 {
        let cam = mat3_t_vec(&self.rectification, q);
        mat3_t_vec(&self.rotation, cam - self.translation)
    }

    /// Rectified-camera direction → LiDAR direction (rotation only).
    pub fn rect_dir_to_lidar(&self, d: Vec3) -> Vec3 {
        mat3_t_vec(&self.rotation, mat3_t_vec(&self.rectification, d))
    }

    pub fn lidar_dir_to_rect(&self, d: Vec3) -> Vec3 {
        mat3_vec(&self.rectification, mat3_vec(&self.rotation, d))
    }

    /// Project a LiDAR-frame point to `(u, v, depth)`.
    pub fn project(&self, p: Vec3) -> Result<(f64, f64, f64), GeometryError> {
        let q = self.lidar_to_rect(p);
        if q.z <= 0.0 {
            return Err(GeometryError::BehindCamera(q.z));
        }
        let m = &self.cam_projection;
        let row = |r: usize| m[r][0] * q.x + m[r][1] * q.y + m[r][2] * q.z + m[r][3];
        let s = row(2);
        if s <= 0.0 {
            return Err(GeometryError::BehindCamera(q.z));
        }
        Ok((row(0) / s, row(1) / s, q.z))
    }

    /// Tight 2D box around the projected corners of `b`, or `None` if any corner is behind the camera.
    pub fn project_box(&self, b: &Box3) -> Option<Box2> {
        let mut lo = (f64::INFINITY, f64::INFINITY);
        let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for c in b.corners() {
            let (u, v, _) = self.project(c).ok()?;
            lo = (lo.0.min(u), lo.1.min(v));
            hi = (hi.0.max(u), hi.1.max(v));
        }
        Box2::new(lo.0, lo.1, hi.0, hi.1).ok()
    }
}

/// `project_point` as a free function.
pub fn project_point(calib: &Calibration, p: Vec3) -> Result<(f64, f64, f64), GeometryError> {
    calib.project(p)
}

/// Points with positive depth whose projection falls inside `box2` (inclusive).
pub fn frustum_select(cloud: &PointCloud, calib: &Calibration, box2: &Box2) -> PointCloud {
    let points = cloud
        .points
        .iter()
        .filter(|p| matches!(calib.project(p.pos), Ok((u, v, _)) if box2.contains(u, v)))
        .copied()
        .collect();
    PointCloud { points }
}

pub fn points_in_box(cloud: &PointCloud, b: &Box3) -> PointCloud {
    PointCloud { points: cloud.points.iter().filter(|p| b.contains(p.pos)).copied().collect() }
}

pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        s += a[0] * b[1] - a[1] * b[0];
    }
    0.5 * s
}

/// Sutherland–Hodgman: clip `subject` against the convex, counterclockwise `clip`.
pub fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut out: Vec<[f64; 2]> = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if out.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % n];
        let side = |p: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        let input = std::mem::take(&mut out);
        let m = input.len();
        for j in 0..m {
            let cur = input[j];
            let prev = input[(j + m - 1) % m];
            let (sc, sp) = (side(cur), side(prev));
            if sc >= 0.0 {
                if sp < 0.0 {
                    out.push(intersect(prev, cur, sp, sc));
                }
                out.push(cur);
            } else if sp >= 0.0 {
                out.push(intersect(prev, cur, sp, sc));
            }
        }
    }
    out
}

fn intersect(p: [f64; 2], q: [f64; 2], sp: f64, sq: f64) -> [f64; 2] {
    let t = sp / (sp - sq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

fn box_key(b: &Box3) -> [f64; 7] {
    [b.center.x, b.center.y, b.center.z, b.h, b.l, b.w, b.yaw]
}

/// Put the pair in a fixed order so the floating-point path is identical either way round.
fn ordered<'a>(a: &'a Box3, b: &'a Box3) -> (&'a Box3, &'a Box3) {
    let (ka, kb) = (box_key(a), box_key(b));
    for (x, y) in ka.iter().zip(kb.iter()) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Less => return (a, b),
            std::cmp::Ordering::Greater => return (b, a),
            std::cmp::Ordering::Equal => {}
        }
    }
    (a, b)
}

/// Area of the footprint intersection.
pub fn footprint_intersection(a: &Box3, b: &Box3) -> f64 {
    let (a, b) = ordered(a, b);
    let da = a.l.hypot(a.w) * 0.5;
    let db = b.l.hypot(b.w) * 0.5;
    let (dx, dy) = (a.center.x - b.center.x, a.center.y - b.center.y);
    if dx.hypot(dy) > da + db {
        return 0.0;
    }
    let area = polygon_area(&clip_convex(&a.footprint(), &b.footprint()));
    if area < AREA_EPS {
        0.0
    } else {
        area
    }
}

/// Bird's-eye-view IoU of the two footprints.
pub fn iou_bev(a: &Box3, b: &Box3) -> f64 {
    let inter = footprint_intersection(a, b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.l * a.w + b.l * b.w - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Vertical overlap of two boxes (m).
pub fn vertical_overlap(a: &Box3, b: &Box3) -> f64 {
    (a.top().min(b.top()) - a.bottom().max(b.bottom())).max(0.0)
}

/// Volume IoU: footprint intersection × vertical overlap over the union volume.
pub fn iou_3d(a: &Box3, b: &Box3) -> f64 {
    let dz = vertical_overlap(a, b);
    if dz <= 0.0 {
        return 0.0;
    }
    let inter = footprint_intersection(a, b) * dz;
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cube() -> Box3 {
        Box3::new(Vec3::ZERO, 1.0, 1.0, 1.0, 0.0).unwrap()
    }

    fn close(a: Vec3, b: Vec3, tol: f64) -> bool {
        (a - b).norm() < tol
    }

    #[test]
    fn identity_projection() {
        let (u, v, d) = Calibration::identity().project(Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!((u, v, d), (0.0, 0.0, 1.0));
    }

    #[test]
    fn focal_projection_hand_multiply() {
        let mut c = Calibration::identity();
        c.cam_projection = [[100.0, 0.0, 50.0, 0.0], [0.0, 100.0, 50.0, 0.0], [0.0, 0.0, 1.0, 0.0]];
        let (u, v, d) = c.project(Vec3::new(1.0, 0.0, 2.0)).unwrap();
        assert!((u - 100.0).abs() < 1e-12 && (v - 50.0).abs() < 1e-12 && (d - 2.0).abs() < 1e-12);
    }

    #[test]
    fn behind_camera() {
        let err = Calibration::identity().project(Vec3::new(0.0, 0.0, -1.0)).unwrap_err();
        assert!(matches!(err, GeometryError::BehindCamera(_)));
    }

    #[test]
    fn calibration_rejects_non_orthonormal() {
        let c = Calibration::identity();
        let mut r = c.rotation;
        r[0][0] = 2.0;
        assert!(Calibration::new(c.cam_projection, r, Vec3::ZERO, c.rectification).is_err());
        let mut p = c.cam_projection;
        p[2] = [0.0; 4];
        assert!(Calibration::new(p, c.rotation, Vec3::ZERO, c.rectification).is_err());
    }

    #[test]
    fn rect_round_trip() {
        let c = Calibration::pinhole_for_lidar(700.0, 600.0, 180.0);
        let p = Vec3::new(10.0, -2.0, 0.5);
        assert!(close(c.rect_to_lidar(c.lidar_to_rect(p)), p, 1e-12));
        // forward axis maps to depth
        assert!((c.lidar_to_rect(p).z - 10.0).abs() < 1e-12);
    }

    #[test]
    fn frustum_empty_and_single() {
        let calib = Calibration::pinhole_for_lidar(100.0, 50.0, 50.0);
        let b2 = Box2::new(40.0, 40.0, 60.0, 60.0).unwrap();
        assert!(frustum_select(&PointCloud::new(), &calib, &b2).is_empty());
        let one = PointCloud::from_positions([Vec3::new(5.0, 0.0, 0.0)]);
        assert_eq!(frustum_select(&one, &calib, &b2).len(), 1);
    }

    #[test]
    fn frustum_grid_matches_brute_force() {
        let mut c = Calibration::identity();
        c.cam_projection = [[100.0, 0.0, 50.0, 0.0], [0.0, 100.0, 50.0, 0.0], [0.0, 0.0, 1.0, 0.0]];
        // image 100x100, box covers the left half
        let b2 = Box2::new(0.0, 0.0, 50.0, 100.0).unwrap();
        let mut cloud = PointCloud::new();
        for i in 0..10 {
            for j in 0..10 {
                // x, y in [-1, 1] at depth 2 spans twice the image half-extent
                let x = -1.0 + 2.0 * i as f64 / 9.0;
                let y = -1.0 + 2.0 * j as f64 / 9.0;
                cloud.push(Vec3::new(x, y, 2.0), 0.0);
            }
        }
        let sel = frustum_select(&cloud, &c, &b2);
        // u = 50 x + 50 ∈ [0, 50] ⇔ x ∈ [-1, 0]; v = 50 y + 50 ∈ [0,100] ⇔ y ∈ [-1, 1]
        let expected: Vec<Vec3> = cloud.positions().filter(|p| p.x <= 0.0).collect();
        let got: Vec<Vec3> = sel.positions().collect();
        assert_eq!(got, expected);
        assert_eq!(got.len(), 50);
    }

    #[test]
    fn unit_cube_corners() {
        let c = cube().corners();
        let expect = [
            (0.5, 0.5, -0.5),
            (-0.5, 0.5, -0.5),
            (-0.5, -0.5, -0.5),
            (0.5, -0.5, -0.5),
            (0.5, 0.5, 0.5),
            (-0.5, 0.5, 0.5),
            (-0.5, -0.5, 0.5),
            (0.5, -0.5, 0.5),
        ];
        for (p, e) in c.iter().zip(expect) {
            assert!(close(*p, Vec3::new(e.0, e.1, e.2), 1e-15));
        }
    }

    #[test]
    fn rotated_cube_corners() {
        let base = cube().corners();
        let rot = Box3 { yaw: PI / 2.0, ..cube() }.corners();
        for (a, b) in base.iter().zip(rot.iter()) {
            assert!(close(a.rotate_z(PI / 2.0), *b, 1e-12));
        }
    }

    #[test]
    fn corners_compose_rotate_translate() {
        let b = Box3::new(Vec3::new(1.0, 1.0, 0.0), 2.0, 4.0, 2.0, PI / 6.0).unwrap();
        let (s, c) = (0.5f64, 3f64.sqrt() / 2.0);
        let local = [(2.0, 1.0), (-2.0, 1.0), (-2.0, -1.0), (2.0, -1.0)];
        let got = b.corners();
        for (k, (x, y)) in local.iter().enumerate() {
            let wx = c * x - s * y + 1.0;
            let wy = s * x + c * y + 1.0;
            assert!(close(got[k], Vec3::new(wx, wy, -1.0), 1e-12));
            assert!(close(got[k + 4], Vec3::new(wx, wy, 1.0), 1e-12));
        }
    }

    #[test]
    fn corners_refit_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let b = Box3::new(
                Vec3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(-2.0..2.0)),
                rng.random_range(0.5..3.0),
                rng.random_range(0.5..6.0),
                rng.random_range(0.5..3.0),
                rng.random_range(-PI..PI),
            )
            .unwrap();
            let r = Box3::from_corners(&b.corners()).unwrap();
            assert!(close(r.center, b.center, 1e-9));
            assert!((r.h - b.h).abs() < 1e-9 && (r.l - b.l).abs() < 1e-9 && (r.w - b.w).abs() < 1e-9);
            assert!(wrap_angle(r.yaw - b.yaw).abs() < 1e-9);
        }
    }

    #[test]
    fn invalid_boxes_rejected() {
        assert!(Box3::new(Vec3::ZERO, 0.0, 1.0, 1.0, 0.0).is_err());
        assert!(Box3::new(Vec3::new(f64::NAN, 0.0, 0.0), 1.0, 1.0, 1.0, 0.0).is_err());
        assert!(Box2::new(1.0, 0.0, 1.0, 2.0).is_err());
        assert_eq!(Box3::new(Vec3::ZERO, 1.0, 1.0, 1.0, 3.0 * PI).unwrap().yaw, PI);
    }

    #[test]
    fn iou_hand_cases() {
        let a = cube();
        assert_eq!(iou_bev(&a, &a), 1.0);
        assert_eq!(iou_3d(&a, &a), 1.0);
        let far = Box3 { center: Vec3::new(3.0, 0.0, 0.0), ..a };
        assert_eq!(iou_bev(&a, &far), 0.0);
        let half = Box3 { center: Vec3::new(0.5, 0.0, 0.0), ..a };
        assert!((iou_bev(&a, &half) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn iou_3d_vertical_cases() {
        let a = Box3::new(Vec3::new(0.0, 0.0, 1.0), 2.0, 4.0, 2.0, 0.3).unwrap();
        let b = Box3 { center: Vec3::new(0.0, 0.0, 2.0), ..a };
        assert!((iou_3d(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        let c = Box3 { center: Vec3::new(0.0, 0.0, 5.0), ..a };
        assert_eq!(iou_3d(&a, &c), 0.0);
    }

    #[test]
    fn membership_boundaries() {
        let b = Box3::new(Vec3::new(2.0, -1.0, 0.3), 1.5, 4.0, 1.8, 0.7).unwrap();
        assert!(b.contains(b.center));
        for c in b.corners() {
            assert!(b.contains(c));
        }
        let out = b.to_world(Vec3::new(2.0 + 1e-6, 0.0, 0.0));
        assert!(!b.contains(out));
    }

    #[test]
    fn points_in_box_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let b = Box3::new(Vec3::new(1.0, 2.0, 0.0), 1.5, 4.0, 2.0, -0.9).unwrap();
        let cloud = PointCloud::from_positions((0..1000).map(|_| {
            Vec3::new(rng.random_range(-3.0..5.0), rng.random_range(-2.0..6.0), rng.random_range(-1.5..1.5))
        }));
        let got = points_in_box(&cloud, &b);
        let (s, c) = b.yaw.sin_cos();
        let expect: Vec<Vec3> = cloud
            .positions()
            .filter(|p| {
                let (dx, dy, dz) = (p.x - 1.0, p.y - 2.0, p.z);
                let lx = c * dx + s * dy;
                let ly = -s * dx + c * dy;
                lx.abs() <= 2.0 && ly.abs() <= 1.0 && dz.abs() <= 0.75
            })
            .collect();
        assert_eq!(got.positions().collect::<Vec<_>>(), expect);
        assert!(!expect.is_empty());
    }
}
