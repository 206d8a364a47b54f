//! Training a small stage-1 refinement network on jittered boxes around synthetic
//! cars, saving it, and using it to correct a perturbed box.
//!
//! `cargo run --release --example train_refiner -- [iterations]`

use frustum3d::geometry::{iou_bev, Box3, Vec3};
use frustum3d::pipeline::{refine_box, scene_samples, SampleConfig};
use frustum3d::refine_net::{load_params, save_params, train, CanonicalAnchor, NetArch, NetParams, Network, RefineStage, TrainConfig};
use frustum3d::synth::{make_scene, random_scene_spec, scene_seed, RandomSceneConfig};

fn main() {
    let iterations: usize = std::env::args().nth(1).map_or(300, |s| s.parse().expect("iterations must be an integer"));
    let anchor = CanonicalAnchor::default();
    let mut data = Vec::new();
    for i in 0..60 {
        let scene = make_scene(&random_scene_spec(&RandomSceneConfig::default(), scene_seed(100, i))).unwrap();
        let gts: Vec<Box3> = scene.ground_truth.iter().map(|g| g.0).collect();
        data.extend(scene_samples(&scene.cloud, &gts, RefineStage::One, &anchor, &SampleConfig::default(), i));
    }
    let positives = data.iter().filter(|s| s.positive).count();
    println!("{} samples, {positives} positive", data.len());

    let mut net = Network::new(NetArch { widths: vec![8, 16, 32, 32], hidden: 64, regression: true }, 0).unwrap();
    let cfg = TrainConfig {
        batch_size: 32,
        iterations,
        learning_rate: 0.003,
        momentum: 0.9,
        reg_weight: 30.0,
        log_every: 50,
        ..Default::default()
    };
    train(&mut net, &data, &cfg, |r| println!("{r}")).unwrap();

    let path = std::env::temp_dir().join("frustum3d_example_stage1.f3np");
    save_params(&path, &NetParams { net, anchor }).unwrap();
    let params = load_params(&path).unwrap();
    println!("saved {} parameters to {}", params.net.parameter_count(), path.display());

    let scene = make_scene(&random_scene_spec(&RandomSceneConfig::default(), scene_seed(7, 0))).unwrap();
    let truth = scene.ground_truth[0].0;
    let rough = Box3 { center: truth.center + Vec3::new(0.3, -0.15, 0.0), l: truth.l * 0.92, yaw: truth.yaw + 0.05, ..truth };
    let refined = refine_box(&scene.cloud, &rough, &params).expect("decodable output");
    println!("BEV IoU with truth: rough {:.3} -> refined {:.3}", iou_bev(&truth, &rough), iou_bev(&truth, &refined));
}
