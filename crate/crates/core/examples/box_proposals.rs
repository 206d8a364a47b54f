//! RANSAC box proposals inside one car's frustum.
//!
//! `cargo run --example box_proposals`

use frustum3d::geometry::{frustum_select, iou_bev};
use frustum3d::proposals::{generate_proposals_traced, ProposalConfig};
use frustum3d::synth::{make_scene, random_scene_spec, RandomSceneConfig};

fn main() {
    let spec = random_scene_spec(&RandomSceneConfig::default(), 3);
    let scene = make_scene(&spec).unwrap();
    let cfg = ProposalConfig::default();
    for ((gt, _), label) in scene.ground_truth.iter().zip(&scene.labels) {
        let subset = frustum_select(&scene.cloud, &spec.calib, &label.box2);
        let traces = generate_proposals_traced(&subset, gt.dims(), spec.sensor_origin, &cfg);
        let boxes: Vec<_> = traces.iter().flat_map(|t| &t.boxes).collect();
        let best = boxes.iter().map(|b| iou_bev(gt, b)).fold(0.0, f64::max);
        println!(
            "frustum of {:4} points: {} planes, {} proposals (cap {}), best BEV IoU with truth {best:.3}",
            subset.len(),
            traces.len(),
            boxes.len(),
            cfg.iterations * cfg.max_per_iteration()
        );
    }
}
