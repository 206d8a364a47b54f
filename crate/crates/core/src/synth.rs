//! Parametric car surfaces and synthetic LiDAR scenes with exact ground truth.
//!
//! A car is the vertical extrusion (across its width) of a category-specific side
//! profile drawn in the unit box: `x` runs rear (0) to front (1), `z` bottom (0) to
//! roof (1). The shell consists of the rear and front faces, the two sides under
//! the profile and the profile itself swept across the width ("roof" facets,
//! hood and windshield included). Facets facing away from the sensor are not
//! sampled.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::geometry::{iou_bev, Box2, Box3, Calibration, GeometryError, PointCloud, Vec3};
use crate::kitti_io::LabelRecord;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("ground-truth boxes {0} and {1} overlap in bird's eye view")]
    OverlappingBoxes(usize, usize),
    #[error("car {0} does not project into the camera")]
    OutOfView(usize),
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CarCategory {
    /// SUVs and hatchbacks.
    Suv,
    Sedan,
    Van,
}

impl CarCategory {
    pub const ALL: [CarCategory; 3] = [CarCategory::Suv, CarCategory::Sedan, CarCategory::Van];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            CarCategory::Suv => "SUV",
            CarCategory::Sedan => "Sedan",
            CarCategory::Van => "Van",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name().eq_ignore_ascii_case(s))
    }

    /// Typical `[h, l, w]` in meters.
    pub fn typical_dims(self) -> [f64; 3] {
        match self {
            CarCategory::Suv => [1.70, 4.40, 1.85],
            CarCategory::Sedan => [1.45, 4.55, 1.78],
            CarCategory::Van => [2.05, 4.90, 1.95],
        }
    }
}

/// Facet a surface point (or shell voxel) belongs to, in box-local terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Facet {
    PlusL,
    MinusL,
    PlusW,
    MinusW,
    Roof,
    None,
}

impl Facet {
    pub fn code(self) -> u8 {
        match self {
            Facet::PlusL => 0,
            Facet::MinusL => 1,
            Facet::PlusW => 2,
            Facet::MinusW => 3,
            Facet::Roof => 4,
            Facet::None => 5,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        [Facet::PlusL, Facet::MinusL, Facet::PlusW, Facet::MinusW, Facet::Roof, Facet::None]
            .get(c as usize)
            .copied()
    }

    /// Local outward normal of a vertical facet.
    pub fn vertical_normal(self) -> Option<Vec3> {
        match self {
            Facet::PlusL => Some(Vec3::new(1.0, 0.0, 0.0)),
            Facet::MinusL => Some(Vec3::new(-1.0, 0.0, 0.0)),
            Facet::PlusW => Some(Vec3::new(0.0, 1.0, 0.0)),
            Facet::MinusW => Some(Vec3::new(0.0, -1.0, 0.0)),
            _ => None,
        }
    }

    /// The facet this one becomes after a 180° turn about the vertical axis.
    pub fn flipped(self) -> Self {
        match self {
            Facet::PlusL => Facet::MinusL,
            Facet::MinusL => Facet::PlusL,
            Facet::PlusW => Facet::MinusW,
            Facet::MinusW => Facet::PlusW,
            f => f,
        }
    }
}

/// Normalized side profile: vertices `(x, z)` in the unit box, strictly increasing in `x`,
/// first at `x = 0` and last at `x = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CarProfile {
    pub category: CarCategory,
    pub polyline: Vec<[f64; 2]>,
}

impl CarProfile {
    pub fn new(category: CarCategory, polyline: Vec<[f64; 2]>) -> Result<Self, SynthError> {
        if polyline.len() < 2 {
            return Err(SynthError::InvalidSpec("profile needs at least two vertices".into()));
        }
        if polyline[0][0] != 0.0 || polyline[polyline.len() - 1][0] != 1.0 {
            return Err(SynthError::InvalidSpec("profile must span x = 0 to x = 1".into()));
        }
        if polyline.windows(2).any(|w| w[1][0] <= w[0][0]) {
            return Err(SynthError::InvalidSpec("profile x must increase strictly".into()));
        }
        if polyline.iter().any(|p| !(0.0..=1.0).contains(&p[1])) {
            return Err(SynthError::InvalidSpec("profile heights must lie in [0, 1]".into()));
        }
        Ok(Self { category, polyline })
    }

    /// Built-in profiles; SUV, sedan and van differ mainly in roofline and tail.
    pub fn builtin(category: CarCategory) -> Self {
        let polyline = match category {
            CarCategory::Suv => vec![[0.0, 0.82], [0.06, 0.97], [0.58, 1.0], [0.74, 0.66], [1.0, 0.55]],
            CarCategory::Sedan => vec![
                [0.0, 0.58],
                [0.20, 0.62],
                [0.33, 0.97],
                [0.60, 1.0],
                [0.76, 0.62],
                [1.0, 0.52],
            ],
            CarCategory::Van => vec![[0.0, 0.96], [0.84, 1.0], [0.93, 0.74], [1.0, 0.58]],
        };
        Self { category, polyline }
    }

    /// Profile height at normalized `x`.
    pub fn height_at(&self, x: f64) -> f64 {
        let p = &self.polyline;
        let x = x.clamp(0.0, 1.0);
        for s in p.windows(2) {
            if x <= s[1][0] {
                let t = (x - s[0][0]) / (s[1][0] - s[0][0]);
                return s[0][1] + t * (s[1][1] - s[0][1]);
            }
        }
        p[p.len() - 1][1]
    }

    /// Area under the profile in the unit square.
    pub fn side_area(&self) -> f64 {
        self.polyline.windows(2).map(|s| 0.5 * (s[0][1] + s[1][1]) * (s[1][0] - s[0][0])).sum()
    }
}

/// A planar piece of the car shell in box-local metric coordinates.
struct ShellFacet {
    tag: Facet,
    normal: Vec3,
    centroid: Vec3,
    area: f64,
    kind: FacetKind,
}

enum FacetKind {
    /// Vertical rectangle at fixed local x (front/rear).
    EndFace { x: f64, z_top: f64 },
    /// Side at fixed local y under the profile.
    Side { y: f64 },
    /// Profile segment swept across the width.
    Sweep { a: [f64; 2], b: [f64; 2] },
}

fn shell_facets(profile: &CarProfile, b: &Box3) -> Vec<ShellFacet> {
    let (l, w, h) = (b.l, b.w, b.h);
    let lx = |nx: f64| (nx - 0.5) * l;
    let lz = |nz: f64| (nz - 0.5) * h;
    let p = &profile.polyline;
    let mut out = Vec::new();
    for (tag, nx, z_frac) in [(Facet::MinusL, 0.0, p[0][1]), (Facet::PlusL, 1.0, p[p.len() - 1][1])] {
        let x = lx(nx);
        let z_top = lz(z_frac);
        out.push(ShellFacet {
            tag,
            normal: Vec3::new(if nx == 0.0 { -1.0 } else { 1.0 }, 0.0, 0.0),
            centroid: Vec3::new(x, 0.0, 0.5 * (-0.5 * h + z_top)),
            area: w * h * z_frac,
            kind: FacetKind::EndFace { x, z_top },
        });
    }
    let side_area = profile.side_area() * l * h;
    for (tag, sy) in [(Facet::PlusW, 1.0), (Facet::MinusW, -1.0)] {
        out.push(ShellFacet {
            tag,
            normal: Vec3::new(0.0, sy, 0.0),
            centroid: Vec3::new(0.0, sy * 0.5 * w, 0.0),
            area: side_area,
            kind: FacetKind::Side { y: sy * 0.5 * w },
        });
    }
    for s in p.windows(2) {
        let a = [lx(s[0][0]), lz(s[0][1])];
        let c = [lx(s[1][0]), lz(s[1][1])];
        let (dx, dz) = (c[0] - a[0], c[1] - a[1]);
        let len = dx.hypot(dz);
        out.push(ShellFacet {
            tag: Facet::Roof,
            normal: Vec3::new(-dz / len, 0.0, dx / len),
            centroid: Vec3::new(0.5 * (a[0] + c[0]), 0.0, 0.5 * (a[1] + c[1])),
            area: len * w,
            kind: FacetKind::Sweep { a, b: c },
        });
    }
    out
}

/// Whether a facet with world normal `n` through `centroid` faces `view_origin`.
fn faces_viewer(n: Vec3, centroid: Vec3, view_origin: Vec3) -> bool {
    n.dot(centroid - view_origin) < 0.0
}

fn draw_count(rng: &mut ChaCha8Rng, expected: f64) -> usize {
    let base = expected.floor();
    let extra = if rng.random::<f64>() < expected - base { 1 } else { 0 };
    base as usize + extra
}

/// Surface points with the facet each came from. Points are exact (no noise) and lie on the box
/// boundary or inside it.
pub fn sample_car_surface_tagged(
    profile: &CarProfile,
    b: &Box3,
    view_origin: Vec3,
    density: f64,
    seed: u64,
) -> Vec<(Vec3, Facet)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    if !(density > 0.0) {
        return out;
    }
    let (l, w, h) = (b.l, b.w, b.h);
    for f in shell_facets(profile, b) {
        let n_world = f.normal.rotate_z(b.yaw);
        if !faces_viewer(n_world, b.to_world(f.centroid), view_origin) {
            continue;
        }
        let n = draw_count(&mut rng, f.area * density);
        let mut k = 0;
        while k < n {
            let local = match f.kind {
                FacetKind::EndFace { x, z_top } => {
                    let y = (rng.random::<f64>() - 0.5) * w;
                    let z = -0.5 * h + rng.random::<f64>() * (z_top + 0.5 * h);
                    Vec3::new(x, y, z)
                }
                FacetKind::Side { y } => {
                    let nx = rng.random::<f64>();
                    let nz = rng.random::<f64>();
                    if nz > profile.height_at(nx) {
                        continue;
                    }
                    Vec3::new((nx - 0.5) * l, y, (nz - 0.5) * h)
                }
                FacetKind::Sweep { a, b: c } => {
                    let t = rng.random::<f64>();
                    let y = (rng.random::<f64>() - 0.5) * w;
                    Vec3::new(a[0] + t * (c[0] - a[0]), y, a[1] + t * (c[1] - a[1]))
                }
            };
            out.push((b.to_world(local), f.tag));
            k += 1;
        }
    }
    out
}

pub fn sample_car_surface(profile: &CarProfile, b: &Box3, view_origin: Vec3, density: f64, seed: u64) -> PointCloud {
    let mut cloud = PointCloud::new();
    for (p, _) in sample_car_surface_tagged(profile, b, view_origin, density, seed) {
        cloud.push(p, CAR_REFLECTANCE);
    }
    cloud
}

/// Shell sampling of a profile in the normalized unit box (`[0,1]³`, axes `h, l, w`
/// mapped to `z, x, y`), every facet included. Used to build score maps.
pub fn sample_normalized_shell(profile: &CarProfile, density: f64, seed: u64) -> Vec<(Vec3, Facet)> {
    let unit = Box3 { center: Vec3::new(0.5, 0.5, 0.5), h: 1.0, l: 1.0, w: 1.0, yaw: 0.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for f in shell_facets(profile, &unit) {
        let n = draw_count(&mut rng, f.area * density).max(1);
        let mut k = 0;
        while k < n {
            let local = match f.kind {
                FacetKind::EndFace { x, z_top } => {
                    Vec3::new(x, rng.random::<f64>() - 0.5, -0.5 + rng.random::<f64>() * (z_top + 0.5))
                }
                FacetKind::Side { y } => {
                    let (nx, nz) = (rng.random::<f64>(), rng.random::<f64>());
                    if nz > profile.height_at(nx) {
                        continue;
                    }
                    Vec3::new(nx - 0.5, y, nz - 0.5)
                }
                FacetKind::Sweep { a, b: c } => {
                    let t = rng.random::<f64>();
                    Vec3::new(a[0] + t * (c[0] - a[0]), rng.random::<f64>() - 0.5, a[1] + t * (c[1] - a[1]))
                }
            };
            out.push((unit.to_world(local), f.tag));
            k += 1;
        }
    }
    out
}

pub const CAR_REFLECTANCE: f64 = 0.5;
pub const GROUND_REFLECTANCE: f64 = 0.2;
pub const CLUTTER_REFLECTANCE: f64 = 0.3;

/// Reference range at which `car_density` applies; density falls with range squared.
pub const DENSITY_REFERENCE_RANGE: f64 = 10.0;

/// Vertical wall segment between two horizontal positions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wall {
    pub a: [f64; 2],
    pub b: [f64; 2],
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub cars: Vec<(Box3, CarCategory)>,
    pub sensor_origin: Vec3,
    pub ground_z: f64,
    /// Car surface density (points/m²) at [`DENSITY_REFERENCE_RANGE`].
    pub car_density: f64,
    pub ground_density: f64,
    pub clutter_density: f64,
    pub clutter_height: f64,
    pub walls: Vec<Wall>,
    pub wall_density: f64,
    pub radius: f64,
    /// Isotropic Gaussian jitter on car points (m); zero keeps points on the shell.
    pub noise: f64,
    pub calib: Calibration,
    pub image_size: (f64, f64),
    pub seed: u64,
}

/// KITTI-like synthetic camera intrinsics (1242×375 image).
pub fn default_calibration() -> Calibration {
    Calibration::pinhole_for_lidar(721.5, 621.0, 187.5)
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            cars: Vec::new(),
            sensor_origin: Vec3::ZERO,
            ground_z: -1.73,
            car_density: 60.0,
            ground_density: 0.5,
            clutter_density: 0.0,
            clutter_height: 2.5,
            walls: Vec::new(),
            wall_density: 4.0,
            radius: 45.0,
            noise: 0.0,
            calib: default_calibration(),
            image_size: (1242.0, 375.0),
            seed: 0,
        }
    }
}

fn clip_box2(b: &Box2, size: (f64, f64)) -> (Box2, f64) {
    let u0 = b.u_min.clamp(0.0, size.0);
    let u1 = b.u_max.clamp(0.0, size.0);
    let v0 = b.v_min.clamp(0.0, size.1);
    let v1 = b.v_max.clamp(0.0, size.1);
    let full = (b.u_max - b.u_min) * (b.v_max - b.v_min);
    let kept = (u1 - u0).max(0.0) * (v1 - v0).max(0.0);
    (Box2 { u_min: u0, v_min: v0, u_max: u1, v_max: v1 }, (1.0 - kept / full).clamp(0.0, 1.0))
}

/// A generated scene: the cloud, KITTI labels and the LiDAR-frame ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub cloud: PointCloud,
    pub labels: Vec<LabelRecord>,
    pub ground_truth: Vec<(Box3, CarCategory)>,
}

pub fn make_scene(spec: &SceneSpec) -> Result<Scene, SynthError> {
    if spec.car_density < 0.0 || spec.ground_density < 0.0 || spec.clutter_density < 0.0 || spec.wall_density < 0.0 {
        return Err(SynthError::InvalidSpec("densities must be non-negative".into()));
    }
    for (i, (a, _)) in spec.cars.iter().enumerate() {
        for (j, (b, _)) in spec.cars.iter().enumerate().skip(i + 1) {
            if iou_bev(a, b) > 0.0 {
                return Err(SynthError::OverlappingBoxes(i, j));
            }
        }
    }
    let mut labels = Vec::new();
    for (i, (b, _)) in spec.cars.iter().enumerate() {
        let mut rec = LabelRecord::from_lidar_box("Car", b, &spec.calib, None).map_err(|_| SynthError::OutOfView(i))?;
        let (clipped, trunc) = clip_box2(&rec.box2, spec.image_size);
        if trunc >= 1.0 {
            return Err(SynthError::OutOfView(i));
        }
        rec.box2 = clipped;
        rec.truncation = trunc;
        labels.push(rec);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise.max(0.0)).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    let mut cloud = PointCloud::new();
    for (b, cat) in &spec.cars {
        let range = (b.center - spec.sensor_origin).norm().max(1.0);
        let density = spec.car_density * (DENSITY_REFERENCE_RANGE / range).powi(2);
        let car_seed = rng.random::<u64>();
        for p in sample_car_surface(&CarProfile::builtin(*cat), b, spec.sensor_origin, density, car_seed).points {
            let pos = if spec.noise > 0.0 {
                p.pos + Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng))
            } else {
                p.pos
            };
            cloud.push(pos, CAR_REFLECTANCE);
        }
    }

    let inside_any = |p: Vec3| spec.cars.iter().any(|(b, _)| b.contains(p));
    let under_any = |p: Vec3| {
        spec.cars.iter().any(|(b, _)| {
            let q = b.to_local(p);
            q.x.abs() <= 0.5 * b.l && q.y.abs() <= 0.5 * b.w
        })
    };
    let area = PI * spec.radius * spec.radius;
    let disk = |rng: &mut ChaCha8Rng| {
        let r = spec.radius * rng.random::<f64>().sqrt();
        let t = rng.random::<f64>() * 2.0 * PI;
        (spec.sensor_origin.x + r * t.cos(), spec.sensor_origin.y + r * t.sin())
    };
    for _ in 0..draw_count(&mut rng, area * spec.ground_density) {
        let (x, y) = disk(&mut rng);
        let p = Vec3::new(x, y, spec.ground_z);
        if !under_any(p) {
            cloud.push(p, GROUND_REFLECTANCE);
        }
    }
    for _ in 0..draw_count(&mut rng, area * spec.clutter_density) {
        let (x, y) = disk(&mut rng);
        let p = Vec3::new(x, y, spec.ground_z + rng.random::<f64>() * spec.clutter_height);
        if !inside_any(p) {
            cloud.push(p, CLUTTER_REFLECTANCE);
        }
    }
    for wall in &spec.walls {
        let len = (wall.b[0] - wall.a[0]).hypot(wall.b[1] - wall.a[1]);
        for _ in 0..draw_count(&mut rng, len * wall.height * spec.wall_density) {
            let t = rng.random::<f64>();
            let p = Vec3::new(
                wall.a[0] + t * (wall.b[0] - wall.a[0]),
                wall.a[1] + t * (wall.b[1] - wall.a[1]),
                spec.ground_z + rng.random::<f64>() * wall.height,
            );
            if !inside_any(p) {
                cloud.push(p, CLUTTER_REFLECTANCE);
            }
        }
    }
    Ok(Scene { cloud, labels, ground_truth: spec.cars.clone() })
}

/// Knobs for drawing random scenes.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomSceneConfig {
    pub min_cars: usize,
    pub max_cars: usize,
    pub min_range: f64,
    pub max_range: f64,
    pub dim_jitter: f64,
    pub clutter_density: f64,
    pub walls: bool,
    pub template: SceneSpec,
}

impl Default for RandomSceneConfig {
    fn default() -> Self {
        Self {
            min_cars: 1,
            max_cars: 3,
            min_range: 7.0,
            max_range: 30.0,
            dim_jitter: 0.04,
            clutter_density: 0.02,
            walls: true,
            template: SceneSpec::default(),
        }
    }
}

/// Seed of scene `index` in a dataset drawn with `base` (SplitMix64 finalizer), so
/// datasets with different bases do not share scenes.
pub fn scene_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(index).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Draw a non-overlapping scene with cars in the camera's field of view.
pub fn random_scene_spec(cfg: &RandomSceneConfig, seed: u64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(cfg.min_cars..=cfg.max_cars.max(cfg.min_cars));
    let ground = cfg.template.ground_z;
    let mut cars: Vec<(Box3, CarCategory)> = Vec::new();
    let mut attempts = 0;
    while cars.len() < n && attempts < 1000 {
        attempts += 1;
        let cat = CarCategory::ALL[rng.random_range(0..3)];
        let t = cat.typical_dims();
        let jit = Normal::new(0.0, cfg.dim_jitter.max(1e-12)).unwrap();
        let d: Vec<f64> = t.iter().map(|v| v * jit.sample(&mut rng).clamp(-0.15, 0.15).exp()).collect();
        let x = rng.random_range(cfg.min_range..cfg.max_range);
        let half = (0.55 * x - 3.0).max(0.5);
        let y = rng.random_range(-half..half);
        let yaw = rng.random_range(-PI..PI);
        let b = Box3::new(Vec3::new(x, y, ground + 0.5 * d[0]), d[0], d[1], d[2], yaw).unwrap();
        let margin = b.scaled(1.0, 1.0, 1.0);
        let padded = Box3 { l: margin.l + 1.0, w: margin.w + 1.0, ..margin };
        if cars.iter().any(|(o, _)| iou_bev(o, &padded) > 0.0) {
            continue;
        }
        if cfg.template.calib.project_box(&b).is_none() {
            continue;
        }
        cars.push((b, cat));
    }
    let mut walls = Vec::new();
    if cfg.walls && rng.random::<f64>() < 0.5 {
        let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let x0 = rng.random_range(5.0..15.0);
        let y0 = side * (0.6 * x0 + rng.random_range(2.0..6.0));
        walls.push(Wall { a: [x0, y0], b: [x0 + rng.random_range(10.0..25.0), y0 + side * 4.0], height: 2.5 });
    }
    SceneSpec {
        cars,
        clutter_density: cfg.clutter_density,
        walls,
        seed: rng.random::<u64>(),
        ..cfg.template.clone()
    }
}
