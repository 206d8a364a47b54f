//! Generalized car score maps, view-dependent self-occlusion masking and
//! proposal scoring.
//!
//! A score map is an `8 × 18 × 10` grid over a normalized car volume indexed
//! `(h, l, w)`. Shell voxels score `+1`, the bottom layer scores `0`, and every
//! other voxel scores `−α·d` where `d` is its Chebyshev voxel distance to the
//! nearest shell voxel.
//!
//! File layout (little-endian):
//!
//! ```text
//! "F3SM"  u32 version  u32 map_count
//! per map: u8 category  u32 nh  u32 nl  u32 nw
//!          f32 × (nh·nl·nw) scores, row-major (h, l, w)
//!          u8  × (nh·nl·nw) shell flags (0/1)
//!          u8  × (nh·nl·nw) facet codes (+l, −l, +w, −w, roof, none = 0..5)
//! ```

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::detection::{Detection, Stage};
use crate::geometry::{Box3, PointCloud, Vec3};
use crate::synth::{sample_normalized_shell, CarCategory, CarProfile, Facet};

pub const MAP_H: usize = 8;
pub const MAP_L: usize = 18;
pub const MAP_W: usize = 10;
pub const MAP_LEN: usize = MAP_H * MAP_L * MAP_W;

const MAGIC: &[u8; 4] = b"F3SM";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CarModelError {
    #[error("model cloud is empty")]
    EmptyModelCloud,
    #[error("no proposals to score")]
    NoProposals,
    #[error("score map file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[inline]
pub fn map_index(ih: usize, il: usize, iw: usize) -> usize {
    (ih * MAP_L + il) * MAP_W + iw
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    pub category: CarCategory,
    pub grid: Vec<f64>,
    pub shell: Vec<bool>,
    pub facets: Vec<Facet>,
}

impl ScoreMap {
    pub fn score(&self, ih: usize, il: usize, iw: usize) -> f64 {
        self.grid[map_index(ih, il, iw)]
    }
}

/// Scoring knobs: interior/exterior falloff and occlusion penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreConfig {
    pub alpha: f64,
    pub beta: f64,
    pub mode: ScoringMode,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self { alpha: 0.1, beta: 0.5, mode: ScoringMode::Occupancy }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoringMode {
    /// An occupied voxel contributes its score once.
    Occupancy,
    /// Every point contributes the score of its voxel.
    PerPoint,
}

/// Multi-source Chebyshev (26-neighbour) distance transform on a `dims` grid
/// stored row-major. Voxels unreachable from any source get `usize::MAX`.
pub fn chebyshev_distance(dims: [usize; 3], sources: &[bool]) -> Vec<usize> {
    let [a, b, c] = dims;
    let mut dist = vec![usize::MAX; a * b * c];
    let mut queue = VecDeque::new();
    for (i, &s) in sources.iter().enumerate() {
        if s {
            dist[i] = 0;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y, z) = (i / (b * c), (i / c) % b, i % c);
        for dx in -1i64..=1 {
            for dy in -1i64..=1 {
                for dz in -1i64..=1 {
                    let (nx, ny, nz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                    if nx < 0 || ny < 0 || nz < 0 || nx >= a as i64 || ny >= b as i64 || nz >= c as i64 {
                        continue;
                    }
                    let j = (nx as usize * b + ny as usize) * c + nz as usize;
                    if dist[j] == usize::MAX {
                        dist[j] = dist[i] + 1;
                        queue.push_back(j);
                    }
                }
            }
        }
    }
    dist
}

fn unit_to_voxel(p: Vec3) -> (usize, usize, usize) {
    let f = |v: f64, n: usize| ((v * n as f64).floor().max(0.0) as usize).min(n - 1);
    (f(p.z, MAP_H), f(p.x, MAP_L), f(p.y, MAP_W))
}

/// Build a score map from facet-tagged shell points in the unit box
/// (`x` → l, `y` → w, `z` → h, all in `[0, 1]`).
pub fn build_score_map(shell_cloud: &[(Vec3, Facet)], category: CarCategory, alpha: f64) -> Result<ScoreMap, CarModelError> {
    if shell_cloud.is_empty() {
        return Err(CarModelError::EmptyModelCloud);
    }
    let mut votes = vec![[0u32; 6]; MAP_LEN];
    for (p, f) in shell_cloud {
        let (ih, il, iw) = unit_to_voxel(*p);
        votes[map_index(ih, il, iw)][f.code() as usize] += 1;
    }
    let shell: Vec<bool> = votes.iter().map(|v| v.iter().any(|&c| c > 0)).collect();
    let facets: Vec<Facet> = votes
        .iter()
        .map(|v| {
            let mut best = 5usize;
            let mut best_n = 0;
            for (k, &n) in v.iter().enumerate() {
                if n > best_n {
                    best = k;
                    best_n = n;
                }
            }
            Facet::from_code(best as u8).unwrap()
        })
        .collect();
    let dist = chebyshev_distance([MAP_H, MAP_L, MAP_W], &shell);
    let mut grid = vec![0.0; MAP_LEN];
    for ih in 0..MAP_H {
        for il in 0..MAP_L {
            for iw in 0..MAP_W {
                let i = map_index(ih, il, iw);
                grid[i] = if ih == 0 {
                    0.0
                } else if shell[i] {
                    1.0
                } else {
                    -alpha * dist[i] as f64
                };
            }
        }
    }
    Ok(ScoreMap { category, grid, shell, facets })
}

/// The three maps built from the built-in synthetic profiles.
pub fn build_default_maps(alpha: f64) -> [ScoreMap; 3] {
    let profiles = CarCategory::ALL.map(CarProfile::builtin);
    build_maps_from_profiles(&profiles, alpha)
}

pub fn build_maps_from_profiles(profiles: &[CarProfile; 3], alpha: f64) -> [ScoreMap; 3] {
    profiles.clone().map(|p| {
        let shell = sample_normalized_shell(&p, 40_000.0, 0x5eed ^ p.category.index() as u64);
        build_score_map(&shell, p.category, alpha).expect("profile shell sampling is never empty")
    })
}

/// Which vertical facets `[+l, −l, +w, −w]` of `b` face away from `view_origin`.
pub fn occluded_facets(b: &Box3, view_origin: Vec3) -> [bool; 4] {
    let facets = [Facet::PlusL, Facet::MinusL, Facet::PlusW, Facet::MinusW];
    facets.map(|f| {
        let n_local = f.vertical_normal().unwrap();
        let center_local = Vec3::new(n_local.x * 0.5 * b.l, n_local.y * 0.5 * b.w, 0.0);
        let n = n_local.rotate_z(b.yaw);
        n.dot(b.to_world(center_local) - view_origin) >= 0.0
    })
}

fn facet_slot(f: Facet) -> Option<usize> {
    match f {
        Facet::PlusL => Some(0),
        Facet::MinusL => Some(1),
        Facet::PlusW => Some(2),
        Facet::MinusW => Some(3),
        _ => None,
    }
}

#[inline]
fn masked_value(map: &ScoreMap, i: usize, ih: usize, occluded: &[bool; 4], flipped: bool, beta: f64) -> f64 {
    if ih > 0 && map.shell[i] {
        let f = if flipped { map.facets[i].flipped() } else { map.facets[i] };
        if let Some(s) = facet_slot(f) {
            if occluded[s] {
                return -beta;
            }
        }
    }
    map.grid[i]
}

/// Copy of `map` with the shell voxels of occluded vertical facets set to `−beta`.
pub fn mask_self_occlusion(map: &ScoreMap, b: &Box3, view_origin: Vec3, beta: f64) -> ScoreMap {
    let occ = occluded_facets(b, view_origin);
    let mut out = map.clone();
    for ih in 0..MAP_H {
        for il in 0..MAP_L {
            for iw in 0..MAP_W {
                let i = map_index(ih, il, iw);
                out.grid[i] = masked_value(map, i, ih, &occ, false, beta);
            }
        }
    }
    out
}

/// Per-voxel point counts over the model grid of a box.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelOccupancy {
    pub dims: [usize; 3],
    pub counts: Vec<u32>,
}

impl VoxelOccupancy {
    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    /// Reverse the `l` and `w` axes (a 180° turn about the vertical axis).
    pub fn flipped(&self) -> VoxelOccupancy {
        let [nh, nl, nw] = self.dims;
        let mut counts = vec![0; self.counts.len()];
        for ih in 0..nh {
            for il in 0..nl {
                for iw in 0..nw {
                    counts[(ih * nl + (nl - 1 - il)) * nw + (nw - 1 - iw)] = self.counts[(ih * nl + il) * nw + iw];
                }
            }
        }
        VoxelOccupancy { dims: self.dims, counts }
    }
}

/// Anisometric voxelization of the in-box points into the model grid.
pub fn voxelize_to_model_grid(points: &PointCloud, b: &Box3) -> VoxelOccupancy {
    let mut counts = vec![0u32; MAP_LEN];
    for p in points.positions() {
        if !b.contains(p) {
            continue;
        }
        let q = b.to_local(p);
        let unit = Vec3::new(q.x / b.l + 0.5, q.y / b.w + 0.5, q.z / b.h + 0.5);
        let (ih, il, iw) = unit_to_voxel(unit);
        counts[map_index(ih, il, iw)] += 1;
    }
    VoxelOccupancy { dims: [MAP_H, MAP_L, MAP_W], counts }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxScore {
    pub score: f64,
    pub category: CarCategory,
    pub flipped: bool,
}

/// Score an occupancy grid against one map in one orientation.
pub fn score_occupancy(
    occ: &VoxelOccupancy,
    map: &ScoreMap,
    occluded: &[bool; 4],
    flipped: bool,
    cfg: &ScoreConfig,
) -> f64 {
    let mut s = 0.0;
    for ih in 0..MAP_H {
        for il in 0..MAP_L {
            for iw in 0..MAP_W {
                let n = occ.counts[map_index(ih, il, iw)];
                if n == 0 {
                    continue;
                }
                let (ml, mw) = if flipped { (MAP_L - 1 - il, MAP_W - 1 - iw) } else { (il, iw) };
                let i = map_index(ih, ml, mw);
                let v = masked_value(map, i, ih, occluded, flipped, cfg.beta);
                s += match cfg.mode {
                    ScoringMode::Occupancy => v,
                    ScoringMode::PerPoint => v * n as f64,
                };
            }
        }
    }
    s
}

/// Best of the three categories × two orientations. Ties keep the first combination
/// in (SUV, Sedan, Van) × (as-is, flipped) order.
pub fn score_box(subset: &PointCloud, b: &Box3, maps: &[ScoreMap; 3], view_origin: Vec3, cfg: &ScoreConfig) -> BoxScore {
    let occ = voxelize_to_model_grid(subset, b);
    let occluded = occluded_facets(b, view_origin);
    let mut best = BoxScore { score: f64::NEG_INFINITY, category: maps[0].category, flipped: false };
    for map in maps {
        for flipped in [false, true] {
            let s = score_occupancy(&occ, map, &occluded, flipped, cfg);
            if s > best.score {
                best = BoxScore { score: s, category: map.category, flipped };
            }
        }
    }
    best
}

/// Highest-scoring proposal; ties go to the earliest index. A flipped match turns the box by 180°.
pub fn fit_best_box(
    subset: &PointCloud,
    proposals: &[Box3],
    maps: &[ScoreMap; 3],
    view_origin: Vec3,
    cfg: &ScoreConfig,
) -> Result<Detection, CarModelError> {
    let mut best: Option<(usize, BoxScore)> = None;
    for (i, b) in proposals.iter().enumerate() {
        let s = score_box(subset, b, maps, view_origin, cfg);
        if best.map_or(true, |(_, bs)| s.score > bs.score) {
            best = Some((i, s));
        }
    }
    let (i, s) = best.ok_or(CarModelError::NoProposals)?;
    let mut bbox = proposals[i];
    if s.flipped {
        bbox = Box3::new(bbox.center, bbox.h, bbox.l, bbox.w, bbox.yaw + std::f64::consts::PI).unwrap();
    }
    Ok(Detection { bbox, score: s.score, category: s.category, stage: Stage::ModelFit })
}

pub fn encode_maps(maps: &[ScoreMap]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(maps.len() as u32).to_le_bytes());
    for m in maps {
        out.push(m.category.index() as u8);
        for d in [MAP_H, MAP_L, MAP_W] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &m.grid {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out.extend(m.shell.iter().map(|&s| s as u8));
        out.extend(m.facets.iter().map(|f| f.code()));
    }
    out
}

pub fn decode_maps(bytes: &[u8]) -> Result<Vec<ScoreMap>, CarModelError> {
    let bad = |m: &str| CarModelError::Format(m.to_string());
    let mut cur = bytes;
    let mut take = |n: usize| -> Result<&[u8], CarModelError> {
        if cur.len() < n {
            return Err(CarModelError::Format("unexpected end of file".into()));
        }
        let (a, b) = cur.split_at(n);
        cur = b;
        Ok(a)
    };
    if take(4)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let u32_of = |b: &[u8]| u32::from_le_bytes([b[0], b[1], b[2], b[3]]);
    let version = u32_of(take(4)?);
    if version != VERSION {
        return Err(CarModelError::Format(format!("unsupported version {version}")));
    }
    let count = u32_of(take(4)?) as usize;
    let mut maps = Vec::with_capacity(count.min(16));
    for _ in 0..count {
        let category = CarCategory::from_index(take(1)?[0] as usize).ok_or_else(|| bad("bad category"))?;
        let dims = [u32_of(take(4)?), u32_of(take(4)?), u32_of(take(4)?)];
        if dims != [MAP_H as u32, MAP_L as u32, MAP_W as u32] {
            return Err(CarModelError::Format(format!("unsupported grid {dims:?}")));
        }
        let grid = take(4 * MAP_LEN)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let shell = take(MAP_LEN)?.iter().map(|&b| b != 0).collect();
        let facets = take(MAP_LEN)?
            .iter()
            .map(|&c| Facet::from_code(c).ok_or_else(|| bad("bad facet code")))
            .collect::<Result<_, _>>()?;
        maps.push(ScoreMap { category, grid, shell, facets });
    }
    Ok(maps)
}

pub fn save_maps(path: impl AsRef<Path>, maps: &[ScoreMap]) -> Result<(), CarModelError> {
    fs::write(path, encode_maps(maps))?;
    Ok(())
}

/// Load exactly one map per category, ordered SUV, Sedan, Van.
pub fn load_maps(path: impl AsRef<Path>) -> Result<[ScoreMap; 3], CarModelError> {
    let mut maps = decode_maps(&fs::read(path)?)?;
    maps.sort_by_key(|m| m.category);
    let cats: Vec<CarCategory> = maps.iter().map(|m| m.category).collect();
    if cats != CarCategory::ALL {
        return Err(CarModelError::Format(format!("expected one map per category, found {cats:?}")));
    }
    let mut it = maps.into_iter();
    Ok([it.next().unwrap(), it.next().unwrap(), it.next().unwrap()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::sample_car_surface;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn full_cube_shell(n: usize) -> Vec<(Vec3, Facet)> {
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let a = (i as f64 + 0.5) / n as f64;
                let b = (j as f64 + 0.5) / n as f64;
                out.push((Vec3::new(0.0, a, b), Facet::MinusL));
                out.push((Vec3::new(1.0, a, b), Facet::PlusL));
                out.push((Vec3::new(a, 0.0, b), Facet::MinusW));
                out.push((Vec3::new(a, 1.0, b), Facet::PlusW));
                out.push((Vec3::new(a, b, 1.0), Facet::Roof));
                out.push((Vec3::new(a, b, 0.0), Facet::None));
            }
        }
        out
    }

    #[test]
    fn saturated_shell() {
        let m = build_score_map(&full_cube_shell(100), CarCategory::Suv, 0.1).unwrap();
        for ih in 1..MAP_H {
            for il in 0..MAP_L {
                for iw in 0..MAP_W {
                    let boundary = ih == MAP_H - 1 || il == 0 || il == MAP_L - 1 || iw == 0 || iw == MAP_W - 1;
                    if boundary {
                        assert_eq!(m.score(ih, il, iw), 1.0, "({ih},{il},{iw})");
                    } else {
                        assert!(m.score(ih, il, iw) < 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn empty_cloud_rejected() {
        assert!(matches!(build_score_map(&[], CarCategory::Van, 0.1), Err(CarModelError::EmptyModelCloud)));
    }

    #[test]
    fn distance_transform_matches_brute_force_on_toy_grid() {
        let mut src = vec![false; 64];
        src[0] = true; // (0,0,0)
        src[(3 * 4 + 3) * 4 + 1] = true; // (3,3,1)
        let d = chebyshev_distance([4, 4, 4], &src);
        for x in 0..4i64 {
            for y in 0..4i64 {
                for z in 0..4i64 {
                    let brute = [(0i64, 0i64, 0i64), (3, 3, 1)]
                        .iter()
                        .map(|s| (x - s.0).abs().max((y - s.1).abs()).max((z - s.2).abs()))
                        .min()
                        .unwrap();
                    assert_eq!(d[((x * 4 + y) * 4 + z) as usize] as i64, brute);
                }
            }
        }
        // alpha = 0.1 scores: (1,0,0) is at d = 1, (3,0,3) at d = 3
        assert!((-0.1 * d[16] as f64 + 0.1).abs() < 1e-15);
        assert_eq!(d[(3 * 4) * 4 + 3], 3);
    }

    #[test]
    fn default_map_invariants() {
        for m in build_default_maps(0.1) {
            assert_eq!(m.grid.len(), MAP_LEN);
            for il in 0..MAP_L {
                for iw in 0..MAP_W {
                    assert_eq!(m.score(0, il, iw), 0.0);
                }
            }
            let dist = chebyshev_distance([MAP_H, MAP_L, MAP_W], &m.shell);
            for i in 0..MAP_LEN {
                if i / (MAP_L * MAP_W) == 0 {
                    continue;
                }
                if m.shell[i] {
                    assert_eq!(m.grid[i], 1.0);
                } else {
                    assert!(m.grid[i] <= 0.0);
                    assert!((m.grid[i] + 0.1 * dist[i] as f64).abs() < 1e-12);
                }
            }
        }
    }

    fn test_box() -> Box3 {
        Box3::new(Vec3::new(0.0, 0.0, 0.0), 1.6, 4.0, 1.8, 0.0).unwrap()
    }

    #[test]
    fn occlusion_axis_and_diagonal() {
        let b = test_box();
        let occ = occluded_facets(&b, Vec3::new(50.0, 0.0, 0.0));
        // head-on: the sides are seen edge-on from inside their planes and count as occluded
        assert_eq!(occ, [false, true, true, true]);
        let occ = occluded_facets(&b, Vec3::new(50.0, 50.0, 0.0));
        assert_eq!(occ, [false, true, false, true]);
        assert_eq!(occ.iter().filter(|&&x| x).count(), 2);
    }

    #[test]
    fn masking_touches_only_vertical_shell() {
        let maps = build_default_maps(0.1);
        let b = test_box();
        let masked = mask_self_occlusion(&maps[0], &b, Vec3::new(50.0, 0.0, 0.0), 0.5);
        let mut minus_l_changed = 0;
        for i in 0..MAP_LEN {
            let f = maps[0].facets[i];
            if f == Facet::Roof || !maps[0].shell[i] {
                assert_eq!(masked.grid[i], maps[0].grid[i]);
            }
            if maps[0].shell[i] && f == Facet::PlusL {
                assert_eq!(masked.grid[i], maps[0].grid[i]);
            }
            if maps[0].shell[i] && f == Facet::MinusL && i >= MAP_L * MAP_W {
                assert_eq!(masked.grid[i], -0.5);
                minus_l_changed += 1;
            }
        }
        assert!(minus_l_changed > 0);
    }

    #[test]
    fn model_grid_indices() {
        let b = Box3::new(Vec3::new(3.0, -2.0, 0.5), 1.6, 4.0, 1.8, 0.7).unwrap();
        let one = |p: Vec3| {
            let occ = voxelize_to_model_grid(&PointCloud::from_positions([p]), &b);
            occ.counts.iter().position(|&c| c == 1).unwrap()
        };
        assert_eq!(one(b.corners()[2]), map_index(0, 0, 0));
        assert_eq!(one(b.center), map_index(4, 9, 5));
        // far corner clamps into the last voxel
        assert_eq!(one(b.corners()[4]), map_index(7, 17, 9));
    }

    #[test]
    fn model_grid_brute_force() {
        let b = Box3::new(Vec3::new(1.0, 1.0, 0.0), 1.5, 4.2, 1.7, -0.4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cloud = PointCloud::from_positions((0..500).map(|_| {
            b.to_world(Vec3::new(
                rng.random_range(-2.1..2.1),
                rng.random_range(-0.85..0.85),
                rng.random_range(-0.75..0.75),
            ))
        }));
        let occ = voxelize_to_model_grid(&cloud, &b);
        let mut expect = vec![0u32; MAP_LEN];
        let (s, c) = (-0.4f64).sin_cos();
        for p in cloud.positions() {
            let (dx, dy, dz) = (p.x - 1.0, p.y - 1.0, p.z);
            let lx = c * dx + s * dy;
            let ly = -s * dx + c * dy;
            let ih = (((dz + 0.75) / 1.5 * 8.0).floor() as usize).min(7);
            let il = (((lx + 2.1) / 4.2 * 18.0).floor() as usize).min(17);
            let iw = (((ly + 0.85) / 1.7 * 10.0).floor() as usize).min(9);
            expect[(ih * 18 + il) * 10 + iw] += 1;
        }
        assert_eq!(occ.counts, expect);
        assert_eq!(occ.total(), 500);
    }

    #[test]
    fn flip_is_involution() {
        let b = test_box();
        let cloud = sample_car_surface(&CarProfile::builtin(CarCategory::Suv), &b, Vec3::new(20.0, 8.0, 1.0), 80.0, 2);
        let occ = voxelize_to_model_grid(&cloud, &b);
        assert_eq!(occ.flipped().flipped(), occ);
        let maps = build_default_maps(0.1);
        let occl = occluded_facets(&b, Vec3::new(20.0, 8.0, 1.0));
        let cfg = ScoreConfig::default();
        let direct = score_occupancy(&occ, &maps[1], &occl, true, &cfg);
        // flipping the grid and the facet mask is the same as scoring the flipped grid as-is
        let flipped_occ = occ.flipped();
        let occl_flipped = [occl[1], occl[0], occl[3], occl[2]];
        let via = score_occupancy(&flipped_occ, &maps[1], &occl_flipped, false, &cfg);
        assert!((direct - via).abs() < 1e-12);
    }

    #[test]
    fn empty_subset_tie_rule() {
        let s = score_box(&PointCloud::new(), &test_box(), &build_default_maps(0.1), Vec3::new(20.0, 0.0, 0.0), &ScoreConfig::default());
        assert_eq!(s, BoxScore { score: 0.0, category: CarCategory::Suv, flipped: false });
    }

    #[test]
    fn matching_category_wins() {
        let maps = build_default_maps(0.1);
        let b = Box3::new(Vec3::new(12.0, 3.0, -0.88), 1.7, 4.4, 1.85, 2.2).unwrap();
        let origin = Vec3::ZERO;
        let cfg = ScoreConfig::default();
        for cat in CarCategory::ALL {
            let cloud = sample_car_surface(&CarProfile::builtin(cat), &b, origin, 200.0, 4);
            let occ = voxelize_to_model_grid(&cloud, &b);
            let occl = occluded_facets(&b, origin);
            let scores: Vec<f64> = maps.iter().map(|m| score_occupancy(&occ, m, &occl, false, &cfg)).collect();
            for (k, s) in scores.iter().enumerate() {
                if k != cat.index() {
                    assert!(scores[cat.index()] > *s, "{cat:?}: {scores:?}");
                }
            }
            assert_eq!(score_box(&cloud, &b, &maps, origin, &cfg).category, cat);
        }
    }

    #[test]
    fn center_cluster_scores_negative() {
        let b = test_box();
        let cloud = PointCloud::from_positions((0..50).map(|i| Vec3::new(0.01 * i as f64 - 0.25, 0.0, 0.1)));
        let s = score_box(&cloud, &b, &build_default_maps(0.1), Vec3::new(20.0, 0.0, 0.0), &ScoreConfig::default());
        assert!(s.score < 0.0);
    }

    #[test]
    fn true_box_beats_shifted_box() {
        let maps = build_default_maps(0.1);
        let b = Box3::new(Vec3::new(15.0, -2.0, -0.88), 1.7, 4.4, 1.85, 0.5).unwrap();
        let cloud = sample_car_surface(&CarProfile::builtin(CarCategory::Suv), &b, Vec3::ZERO, 80.0, 1);
        let shifted = Box3 { center: b.center + Vec3::new(2.0, 0.0, 0.0), ..b };
        let d = fit_best_box(&cloud, &[shifted, b], &maps, Vec3::ZERO, &ScoreConfig::default()).unwrap();
        assert_eq!(d.bbox.center, b.center);
        let single = fit_best_box(&cloud, &[shifted], &maps, Vec3::ZERO, &ScoreConfig::default()).unwrap();
        assert_eq!(single.bbox.center, shifted.center);
        assert!(matches!(fit_best_box(&cloud, &[], &maps, Vec3::ZERO, &ScoreConfig::default()), Err(CarModelError::NoProposals)));
    }

    #[test]
    fn map_file_round_trip() {
        let maps = build_default_maps(0.1);
        let bytes = encode_maps(&maps);
        let back = decode_maps(&bytes).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in maps.iter().zip(&back) {
            assert_eq!(a.shell, b.shell);
            assert_eq!(a.facets, b.facets);
            for (x, y) in a.grid.iter().zip(&b.grid) {
                assert!((x - y).abs() < 1e-6);
            }
        }
        assert!(decode_maps(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_maps(b"NOPE").is_err());
    }
}
