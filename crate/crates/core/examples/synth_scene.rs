//! A synthetic LiDAR scene: cars sampled from side profiles with self-occlusion,
//! ground, clutter and walls, plus the matching KITTI labels.
//!
//! `cargo run --example synth_scene -- [seed]`

use frustum3d::geometry::points_in_box;
use frustum3d::synth::{make_scene, random_scene_spec, scene_seed, RandomSceneConfig};

fn main() {
    let seed: u64 = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed must be an integer"));
    let spec = random_scene_spec(&RandomSceneConfig::default(), scene_seed(seed, 0));
    let scene = make_scene(&spec).unwrap();
    println!("{} points, {} cars", scene.cloud.len(), scene.ground_truth.len());
    for ((b, cat), label) in scene.ground_truth.iter().zip(&scene.labels) {
        let range = b.center.x.hypot(b.center.y);
        println!(
            "  {:<5} range {range:5.1} m  yaw {:+.2}  {} points on the car  2D box height {:.0} px",
            cat.name(),
            b.yaw,
            points_in_box(&scene.cloud, b).len(),
            label.box2.height()
        );
    }
}
