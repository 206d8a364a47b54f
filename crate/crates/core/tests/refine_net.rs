//! Training smoke properties on synthetic context voxels.

use frustum3d::geometry::Box3;
use frustum3d::pipeline::{scene_samples, SampleConfig};
use frustum3d::refine_net::params::encode_params;
use frustum3d::refine_net::train::{batch_loss, RefineStage};
use frustum3d::refine_net::{train, CanonicalAnchor, NetArch, NetParams, Network, Sample, TrainConfig};
use frustum3d::synth::{make_scene, random_scene_spec, scene_seed, RandomSceneConfig};

fn synthetic_samples(scenes: u64, stage: RefineStage) -> Vec<Sample> {
    let anchor = CanonicalAnchor::default();
    let mut out = Vec::new();
    for i in 0..scenes {
        let spec = random_scene_spec(&RandomSceneConfig::default(), scene_seed(11, i));
        let scene = make_scene(&spec).unwrap();
        let gts: Vec<Box3> = scene.ground_truth.iter().map(|g| g.0).collect();
        out.extend(scene_samples(&scene.cloud, &gts, stage, &anchor, &SampleConfig::default(), i));
    }
    out
}

fn small_arch() -> NetArch {
    NetArch { widths: vec![8, 16, 32, 32], hidden: 64, regression: true }
}

#[test]
fn loss_halves_on_fixed_batch() {
    let all = synthetic_samples(12, RefineStage::One);
    let pos: Vec<&Sample> = all.iter().filter(|s| s.positive).take(32).collect();
    let neg: Vec<&Sample> = all.iter().filter(|s| !s.positive).take(32).collect();
    assert_eq!((pos.len(), neg.len()), (32, 32));
    let data: Vec<Sample> = pos.into_iter().chain(neg).cloned().collect();
    let batch: Vec<&Sample> = data.iter().collect();

    let mut net = Network::new(small_arch(), 0).unwrap();
    let cfg = TrainConfig {
        batch_size: 64,
        iterations: 200,
        learning_rate: 0.003,
        momentum: 0.9,
        log_every: 50,
        ..Default::default()
    };
    let before = batch_loss(&net, &batch, cfg.reg_weight).unwrap().total();
    let log = train(&mut net, &data, &cfg, |_| {}).unwrap();
    let after = batch_loss(&net, &batch, cfg.reg_weight).unwrap().total();
    assert_eq!(log.len(), 4);
    assert!(after <= 0.5 * before, "loss {before} -> {after}");
}

#[test]
fn training_is_bit_reproducible() {
    let data = synthetic_samples(3, RefineStage::Two);
    let cfg = TrainConfig { batch_size: 16, iterations: 15, log_every: 5, seed: 9, ..Default::default() };
    let run = || {
        let mut net = Network::new(NetArch { regression: false, ..small_arch() }, 3).unwrap();
        let log = train(&mut net, &data, &cfg, |_| {}).unwrap();
        (encode_params(&NetParams { net, anchor: CanonicalAnchor::default() }), log)
    };
    let (a, log_a) = run();
    let (b, log_b) = run();
    assert_eq!(a, b);
    assert_eq!(log_a, log_b);
}

#[test]
fn context_grids_are_sparse() {
    let data = synthetic_samples(20, RefineStage::One);
    let mean = data.iter().map(|s| s.voxels.occupancy_fraction()).sum::<f64>() / data.len() as f64;
    assert!(mean > 0.0 && mean < 0.05, "mean occupancy {mean}");
}
