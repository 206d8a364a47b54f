//! BEV / 3D average precision by difficulty, as `eval` reports it.
//!
//! `cargo run --example evaluate`

use frustum3d::evalkit::{assign_difficulty, evaluate, IouMode, SceneEval};
use frustum3d::geometry::Vec3;
use frustum3d::synth::{make_scene, random_scene_spec, scene_seed, RandomSceneConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut scenes = Vec::new();
    for i in 0..30 {
        let scene = make_scene(&random_scene_spec(&RandomSceneConfig::default(), scene_seed(9, i))).unwrap();
        let gts: Vec<_> = scene.labels.iter().map(|r| (r.to_eval_box().unwrap(), assign_difficulty(r))).collect();
        // a noisy detector: jittered true boxes with scores that favour the good ones, plus false alarms
        let mut dets = Vec::new();
        for (b, _) in &gts {
            let err = rng.random_range(0.0..0.8);
            let jittered = frustum3d::geometry::Box3 { center: b.center + Vec3::new(err, rng.random_range(-0.2..0.2), 0.0), ..*b };
            dets.push((jittered, 1.0 - err + rng.random_range(-0.1..0.1)));
        }
        if rng.random_bool(0.3) {
            let (b, _) = gts[0];
            dets.push((frustum3d::geometry::Box3 { center: b.center + Vec3::new(8.0, 3.0, 0.0), ..b }, rng.random_range(0.0..1.0)));
        }
        scenes.push(SceneEval { gts, dets });
    }
    for points in [11, 40] {
        let report = evaluate(&scenes, &[0.5, 0.7], &[IouMode::Bev, IouMode::Box3D], points).unwrap();
        println!("{}", report.to_table());
    }
}
