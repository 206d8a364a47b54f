//! Score-map model fitting: build the three category maps, score proposals and
//! keep the best box per 2D detection.
//!
//! `cargo run --release --example model_fitting`

use frustum3d::car_models::build_default_maps;
use frustum3d::geometry::iou_bev;
use frustum3d::pipeline::{fit_scene, oracle_detections, FitConfig, Refiners, StopAfter};
use frustum3d::synth::{make_scene, random_scene_spec, scene_seed, RandomSceneConfig};

fn main() {
    let maps = build_default_maps(0.1);
    let cfg = FitConfig { stop_after: StopAfter::Fit, ..Default::default() };
    for i in 0..5 {
        let spec = random_scene_spec(&RandomSceneConfig::default(), scene_seed(0, i));
        let scene = make_scene(&spec).unwrap();
        let dets2d = oracle_detections(&scene.labels, 0.05, i);
        let fit = fit_scene(&scene.cloud, &spec.calib, &dets2d, &maps, Refiners::default(), &cfg);
        for d in &fit.detections {
            let (gt, cat) = scene.ground_truth.iter().max_by(|a, b| iou_bev(&a.0, &d.bbox).total_cmp(&iou_bev(&b.0, &d.bbox))).unwrap();
            println!(
                "scene {i}: fitted {:<5} score {:7.1} vs true {:<5} BEV IoU {:.3}",
                d.category.name(),
                d.score,
                cat.name(),
                iou_bev(gt, &d.bbox)
            );
        }
        for (k, why) in &fit.failures {
            println!("scene {i}: detection {k} skipped: {why}");
        }
    }
}
