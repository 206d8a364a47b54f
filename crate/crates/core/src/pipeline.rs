//! Per-scene detection pipeline (frustum → proposals → model fit → stage-1
//! regression → stage-2 rescoring), oracle 2D inputs, and refinement training data.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::car_models::{fit_best_box, ScoreConfig, ScoreMap};
use crate::detection::{Detection, Stage};
use crate::geometry::{frustum_select, iou_bev, Box3, PointCloud, Vec3};
use crate::kitti_io::{Detection2DInput, LabelRecord};
use crate::proposals::{generate_proposals, ProposalConfig};
use crate::refine_net::net::NetInput;
use crate::refine_net::train::{assign_label, RefineStage, Sample, CAR_CLASS};
use crate::refine_net::{decode_box, encode_targets, expand_context, voxelize_context, NetParams, RegressionTarget7};
use crate::synth::CarCategory;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopAfter {
    Fit,
    Stage1,
    Stage2,
}

impl StopAfter {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "fit" => Some(StopAfter::Fit),
            "stage1" => Some(StopAfter::Stage1),
            "stage2" => Some(StopAfter::Stage2),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub proposals: ProposalConfig,
    pub score: ScoreConfig,
    pub view_origin: Vec3,
    /// Frustums with fewer points are reported as failures.
    pub min_frustum_points: usize,
    pub stop_after: StopAfter,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            proposals: ProposalConfig::default(),
            score: ScoreConfig::default(),
            view_origin: Vec3::ZERO,
            min_frustum_points: 5,
            stop_after: StopAfter::Stage2,
        }
    }
}

/// Trained refinement networks; a missing network skips its stage.
#[derive(Debug, Clone, Copy, Default)]
pub struct Refiners<'a> {
    pub stage1: Option<&'a NetParams>,
    pub stage2: Option<&'a NetParams>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneFit {
    pub detections: Vec<Detection>,
    /// `(2D detection index, reason)` for inputs that produced no box.
    pub failures: Vec<(usize, String)>,
}

/// Stage-1 correction of one box; `None` when the regression does not decode.
pub fn refine_box(cloud: &PointCloud, b: &Box3, params: &NetParams) -> Option<Box3> {
    let ctx = expand_context(b);
    let out = params.net.infer(NetInput::Sparse(&voxelize_context(cloud, &ctx))).ok()?;
    let delta = RegressionTarget7::from_array(out.reg?);
    decode_box(&params.anchor, &ctx, &delta).ok()
}

/// Stage-2 car probability of a box.
pub fn rescore_box(cloud: &PointCloud, b: &Box3, params: &NetParams) -> Option<f64> {
    let ctx = expand_context(b);
    let out = params.net.infer(NetInput::Sparse(&voxelize_context(cloud, &ctx))).ok()?;
    Some(out.probabilities()[CAR_CLASS])
}

/// Runs the pipeline on every 2D detection of one scene. Stage 1 changes geometry
/// only; stage 2 changes the score only.
pub fn fit_scene(
    cloud: &PointCloud,
    calib: &crate::geometry::Calibration,
    dets2d: &[Detection2DInput],
    maps: &[ScoreMap; 3],
    refiners: Refiners<'_>,
    cfg: &FitConfig,
) -> SceneFit {
    let mut out = SceneFit::default();
    for (i, d) in dets2d.iter().enumerate() {
        let subset = frustum_select(cloud, calib, &d.box2);
        if subset.len() < cfg.min_frustum_points.max(2) {
            out.failures.push((i, format!("frustum holds {} points", subset.len())));
            continue;
        }
        let proposals = generate_proposals(&subset, d.dims, cfg.view_origin, &cfg.proposals);
        let mut det = match fit_best_box(&subset, &proposals, maps, cfg.view_origin, &cfg.score) {
            Ok(det) => det,
            Err(e) => {
                out.failures.push((i, e.to_string()));
                continue;
            }
        };
        if cfg.stop_after != StopAfter::Fit {
            if let Some(p) = refiners.stage1 {
                if let Some(b) = refine_box(cloud, &det.bbox, p) {
                    det.bbox = b;
                    det.stage = Stage::Stage1;
                }
            }
            if cfg.stop_after == StopAfter::Stage2 {
                if let Some(p) = refiners.stage2 {
                    if let Some(s) = rescore_box(cloud, &det.bbox, p) {
                        det.score = s;
                        det.stage = Stage::Stage2;
                    }
                }
            }
        }
        out.detections.push(det);
    }
    out
}

/// 2D inputs derived from ground-truth labels: the projected box with confidence 1
/// and dimensions perturbed by a log-normal factor of spread `dim_sigma`.
pub fn oracle_detections(labels: &[LabelRecord], dim_sigma: f64, seed: u64) -> Vec<Detection2DInput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, dim_sigma.max(0.0)).expect("finite sigma");
    labels
        .iter()
        .filter(|r| r.class == "Car")
        .map(|r| {
            let mut dims = [r.h, r.l, r.w];
            for d in &mut dims {
                *d *= noise.sample(&mut rng).exp();
            }
            Detection2DInput { box2: r.box2, confidence: 1.0, dims }
        })
        .collect()
}

/// How refinement training samples are drawn around ground-truth boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleConfig {
    /// Tight jitter, comparable to model-fitting error.
    pub jitters_per_box: usize,
    /// Horizontal center jitter (m, per axis).
    pub center_sigma: f64,
    pub yaw_sigma_deg: f64,
    pub dim_sigma: f64,
    /// Wide jitter, mostly producing negatives near cars.
    pub wide_jitters_per_box: usize,
    pub wide_center_sigma: f64,
    pub wide_yaw_sigma_deg: f64,
    /// Car-sized boxes dropped at random positions away from any car.
    pub background_per_scene: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            jitters_per_box: 10,
            center_sigma: 0.2,
            yaw_sigma_deg: 2.0,
            dim_sigma: 0.06,
            wide_jitters_per_box: 4,
            wide_center_sigma: 1.2,
            wide_yaw_sigma_deg: 30.0,
            background_per_scene: 6,
        }
    }
}

/// Labelled samples for one scene: jittered copies of every car box (regression
/// target against that car, label by BEV IoU threshold of `stage`) plus background.
pub fn scene_samples(
    cloud: &PointCloud,
    gts: &[Box3],
    stage: RefineStage,
    anchor: &crate::refine_net::CanonicalAnchor,
    cfg: &SampleConfig,
    seed: u64,
) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = |s: f64| Normal::new(0.0, s.max(1e-12)).expect("finite sigma");
    let nd = std(cfg.dim_sigma);
    let tight = (std(cfg.center_sigma), std(cfg.yaw_sigma_deg.to_radians()));
    let wide = (std(cfg.wide_center_sigma), std(cfg.wide_yaw_sigma_deg.to_radians()));
    let mut out = Vec::new();
    for gt in gts {
        let runs = std::iter::repeat_n(&tight, cfg.jitters_per_box).chain(std::iter::repeat_n(&wide, cfg.wide_jitters_per_box));
        for (nc, ny) in runs {
            let c = gt.center + Vec3::new(nc.sample(&mut rng), nc.sample(&mut rng), 0.25 * nc.sample(&mut rng));
            let [h, l, w] = gt.dims().map(|d| d * nd.sample(&mut rng).exp());
            let Ok(b) = Box3::new(c, h, l, w, gt.yaw + ny.sample(&mut rng)) else { continue };
            out.push(labelled(cloud, &b, gt, stage, anchor));
        }
    }
    let mut placed = 0;
    let mut attempts = 0;
    while placed < cfg.background_per_scene && attempts < 100 * cfg.background_per_scene.max(1) {
        attempts += 1;
        let cat = CarCategory::ALL[rng.random_range(0..3)];
        let [h, l, w] = cat.typical_dims();
        let x = rng.random_range(5.0..35.0);
        let y = rng.random_range(-0.6 * x..0.6 * x);
        let ground = gts.first().map_or(-1.73, |g| g.bottom());
        let Ok(b) = Box3::new(Vec3::new(x, y, ground + 0.5 * h), h, l, w, rng.random_range(-PI..PI)) else {
            continue;
        };
        if gts.iter().any(|g| iou_bev(g, &b.scaled(1.0, 1.5, 1.6)) > 0.0) {
            continue;
        }
        let voxels = voxelize_context(cloud, &expand_context(&b));
        if voxels.occupied.is_empty() {
            continue;
        }
        out.push(Sample { voxels, positive: false, target: None });
        placed += 1;
    }
    out
}

fn labelled(
    cloud: &PointCloud,
    b: &Box3,
    gt: &Box3,
    stage: RefineStage,
    anchor: &crate::refine_net::CanonicalAnchor,
) -> Sample {
    let ctx = expand_context(b);
    let positive = assign_label(stage, iou_bev(b, gt));
    let target = if positive { encode_targets(anchor, &ctx, gt).ok() } else { None };
    Sample { voxels: voxelize_context(cloud, &ctx), positive: positive && (stage == RefineStage::Two || target.is_some()), target }
}

/// Extra stage-1 samples from the model-fitting outputs of a scene: each fitted box
/// is labelled against its best-overlapping car.
pub fn fitted_samples(
    cloud: &PointCloud,
    fitted: &[Detection],
    gts: &[Box3],
    stage: RefineStage,
    anchor: &crate::refine_net::CanonicalAnchor,
) -> Vec<Sample> {
    fitted
        .iter()
        .filter_map(|d| {
            let (gt, iou) = gts
                .iter()
                .map(|g| (g, iou_bev(&d.bbox, g)))
                .max_by(|a, b| a.1.total_cmp(&b.1))?;
            (iou > 0.0).then(|| labelled(cloud, &d.bbox, gt, stage, anchor))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::car_models::build_default_maps;
    use crate::synth::{make_scene, random_scene_spec, RandomSceneConfig};

    #[test]
    fn oracle_dims_are_noise_free_at_zero_sigma() {
        let spec = random_scene_spec(&RandomSceneConfig::default(), 3);
        let scene = make_scene(&spec).unwrap();
        let dets = oracle_detections(&scene.labels, 0.0, 1);
        assert_eq!(dets.len(), scene.labels.len());
        for (d, r) in dets.iter().zip(&scene.labels) {
            assert_eq!(d.dims, [r.h, r.l, r.w]);
            assert_eq!(d.box2, r.box2);
        }
    }

    #[test]
    fn fit_finds_the_cars() {
        let maps = build_default_maps(0.1);
        let spec = random_scene_spec(&RandomSceneConfig::default(), 5);
        let scene = make_scene(&spec).unwrap();
        let dets = oracle_detections(&scene.labels, 0.0, 0);
        let cfg = FitConfig { stop_after: StopAfter::Fit, ..Default::default() };
        let fit = fit_scene(&scene.cloud, &spec.calib, &dets, &maps, Refiners::default(), &cfg);
        assert_eq!(fit.detections.len() + fit.failures.len(), dets.len());
        let best: f64 = fit
            .detections
            .iter()
            .map(|d| scene.ground_truth.iter().map(|(g, _)| iou_bev(g, &d.bbox)).fold(0.0, f64::max))
            .fold(1.0, f64::min);
        assert!(best > 0.3, "worst fitted IoU {best}");
    }

    #[test]
    fn samples_are_labelled_by_overlap() {
        let spec = random_scene_spec(&RandomSceneConfig::default(), 8);
        let scene = make_scene(&spec).unwrap();
        let anchor = crate::refine_net::CanonicalAnchor::default();
        let gts: Vec<Box3> = scene.ground_truth.iter().map(|g| g.0).collect();
        let s = scene_samples(&scene.cloud, &gts, RefineStage::One, &anchor, &SampleConfig::default(), 2);
        assert!(s.iter().any(|x| x.positive));
        assert!(s.iter().any(|x| !x.positive));
        assert!(s.iter().all(|x| !x.positive || x.target.is_some()));
    }
}
