//! RANSAC-style 3D box proposals over a frustum point subset.
//!
//! Each iteration draws a point, a partner inside a cube around it, and fits the
//! vertical plane through both. Up to `max_seed_points` plane inliers become box
//! corners: the vertical line through an inlier is where the first plane meets a
//! perpendicular second plane, and around that line the footprint can extend in
//! four quadrants with either `l` or `w` along the first plane (eight boxes).
//! The four quadrants on the sensor side of the visible plane are dropped.
//!
//! ```text
//!            far side (kept)
//!   +--------+--------+
//!   | l x w  | l x w  |      the same two quadrants again with w x l
//!   +------- q -------+ ---- first plane (visible face of the car)
//!   | (dropped)       |
//!            sensor side
//! ```

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{Box3, PointCloud, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProposalError {
    #[error("points are horizontally coincident")]
    DegeneratePair,
    #[error("invalid proposal config: {0}")]
    InvalidConfig(String),
}

/// Vertical plane `normal · p = offset` with a horizontal unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerticalPlane {
    pub normal: Vec3,
    pub offset: f64,
}

impl VerticalPlane {
    pub fn signed_distance(&self, p: Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }

    /// Horizontal unit direction lying in the plane.
    pub fn direction(&self) -> Vec3 {
        Vec3::new(self.normal.y, -self.normal.x, 0.0)
    }
}

pub fn fit_vertical_plane(p1: Vec3, p2: Vec3) -> Result<VerticalPlane, ProposalError> {
    let (dx, dy) = (p2.x - p1.x, p2.y - p1.y);
    let len = dx.hypot(dy);
    if len < 1e-9 {
        return Err(ProposalError::DegeneratePair);
    }
    let normal = Vec3::new(-dy / len, dx / len, 0.0);
    Ok(VerticalPlane { normal, offset: normal.dot(p1) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProposalConfig {
    pub iterations: usize,
    pub inlier_threshold: f64,
    pub max_seed_points: usize,
    pub seed_cube_factor: f64,
    pub ground_expand_factor: f64,
    pub seed: u64,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self {
            iterations: 50,
            inlier_threshold: 0.10,
            max_seed_points: 20,
            seed_cube_factor: 1.5,
            ground_expand_factor: 1.5,
            seed: 0,
        }
    }
}

impl ProposalConfig {
    pub fn validate(&self) -> Result<(), ProposalError> {
        if self.iterations < 1 {
            return Err(ProposalError::InvalidConfig("iterations must be >= 1".into()));
        }
        if !(self.inlier_threshold > 0.0) {
            return Err(ProposalError::InvalidConfig("inlier_threshold must be > 0".into()));
        }
        if !(self.seed_cube_factor > 0.0 && self.ground_expand_factor > 0.0) {
            return Err(ProposalError::InvalidConfig("factors must be > 0".into()));
        }
        Ok(())
    }

    /// Upper bound on the proposals one iteration can emit.
    pub fn max_per_iteration(&self) -> usize {
        4 * self.max_seed_points
    }
}

/// What one iteration did; exposed for verification.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    pub first: usize,
    pub second: usize,
    pub plane: VerticalPlane,
    pub inliers: Vec<usize>,
    pub seeds: Vec<usize>,
    pub boxes: Vec<Box3>,
}

/// Lowest `z` among points whose horizontal position falls in the footprint of `b`
/// scaled by `factor` in `l` and `w`; the subset minimum when that footprint is empty.
pub fn ground_under(subset: &PointCloud, b: &Box3, factor: f64, fallback: f64) -> f64 {
    let (hl, hw) = (0.5 * b.l * factor, 0.5 * b.w * factor);
    let (s, c) = b.yaw.sin_cos();
    let mut lowest = f64::INFINITY;
    for p in &subset.points {
        let dx = p.pos.x - b.center.x;
        let dy = p.pos.y - b.center.y;
        let lx = c * dx + s * dy;
        let ly = -s * dx + c * dy;
        if lx.abs() <= hl && ly.abs() <= hw && p.pos.z < lowest {
            lowest = p.pos.z;
        }
    }
    if lowest.is_finite() {
        lowest
    } else {
        fallback
    }
}

fn run_iteration(
    subset: &PointCloud,
    dims: [f64; 3],
    view_origin: Vec3,
    cfg: &ProposalConfig,
    iteration: usize,
    global_min_z: f64,
) -> Option<IterationTrace> {
    let pts = &subset.points;
    let [h, l, w] = dims;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(iteration as u64);

    let first = rng.random_range(0..pts.len());
    let p1 = pts[first].pos;
    let half = 0.5 * cfg.seed_cube_factor * l;
    let candidates: Vec<usize> = (0..pts.len())
        .filter(|&j| {
            let q = pts[j].pos;
            j != first
                && (q.x - p1.x).abs() <= half
                && (q.y - p1.y).abs() <= half
                && (q.z - p1.z).abs() <= half
                && (q.x - p1.x).hypot(q.y - p1.y) >= 1e-9
        })
        .collect();
    if candidates.is_empty() {
        return None;
    }
    let second = candidates[rng.random_range(0..candidates.len())];
    let plane = fit_vertical_plane(p1, pts[second].pos).ok()?;

    let inliers: Vec<usize> =
        (0..pts.len()).filter(|&j| plane.signed_distance(pts[j].pos).abs() < cfg.inlier_threshold).collect();
    let k = cfg.max_seed_points.min(inliers.len());
    let mut picks = index::sample(&mut rng, inliers.len(), k).into_vec();
    picks.sort_unstable();
    let seeds: Vec<usize> = picks.into_iter().map(|i| inliers[i]).collect();

    let t = plane.direction();
    let n = plane.normal;
    let origin_side = plane.signed_distance(view_origin);
    let away = if origin_side > 0.0 { -1.0 } else { 1.0 };

    let mut boxes = Vec::with_capacity(4 * seeds.len());
    for &s in &seeds {
        let q = pts[s].pos;
        for sign_t in [1.0, -1.0] {
            for l_along_plane in [true, false] {
                let (ext_t, ext_n) = if l_along_plane { (l, w) } else { (w, l) };
                let c = q + t * (sign_t * 0.5 * ext_t) + n * (away * 0.5 * ext_n);
                let axis = if l_along_plane { t } else { n };
                let yaw = axis.y.atan2(axis.x);
                let Ok(mut b) = Box3::new(Vec3::new(c.x, c.y, 0.0), h, l, w, yaw) else { continue };
                let ground = ground_under(subset, &b, cfg.ground_expand_factor, global_min_z);
                b.center.z = ground + 0.5 * h;
                boxes.push(b);
            }
        }
    }
    Some(IterationTrace { first, second, plane, inliers, seeds, boxes })
}

/// Per-iteration traces; deterministic in `(subset, dims, view_origin, cfg)`.
/// Iteration `i` draws from stream `i` of the seeded generator, so iterations are independent.
pub fn generate_proposals_traced(
    subset: &PointCloud,
    est_dims: [f64; 3],
    view_origin: Vec3,
    cfg: &ProposalConfig,
) -> Vec<IterationTrace> {
    if subset.len() < 2 || est_dims.iter().any(|d| !(*d > 0.0)) || cfg.validate().is_err() {
        return Vec::new();
    }
    let global_min_z = subset.positions().map(|p| p.z).fold(f64::INFINITY, f64::min);
    (0..cfg.iterations)
        .filter_map(|i| run_iteration(subset, est_dims, view_origin, cfg, i, global_min_z))
        .collect()
}

pub fn generate_proposals(subset: &PointCloud, est_dims: [f64; 3], view_origin: Vec3, cfg: &ProposalConfig) -> Vec<Box3> {
    generate_proposals_traced(subset, est_dims, view_origin, cfg).into_iter().flat_map(|t| t.boxes).collect()
}
