//! Reading and writing the KITTI file formats: velodyne scans, calibration,
//! labels and the 2D-detection input consumed by `fit`.
//!
//! `cargo run --example kitti_files`

use frustum3d::geometry::Box2;
use frustum3d::kitti_io::{
    decode_velodyne, encode_velodyne, format_calib, format_detections_2d, format_labels, parse_calib, parse_detections,
    Detection2DInput,
};
use frustum3d::synth::{make_scene, random_scene_spec, RandomSceneConfig};

fn main() {
    let spec = random_scene_spec(&RandomSceneConfig::default(), 42);
    let scene = make_scene(&spec).unwrap();

    let bytes = encode_velodyne(&scene.cloud);
    let back = decode_velodyne(&bytes).unwrap();
    let worst = back.positions().zip(scene.cloud.positions()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    // stored as f32: the first write quantizes, later ones are lossless
    println!("velodyne: {} points, {} bytes, max f32 rounding {worst:.1e} m", back.len(), bytes.len());
    assert_eq!(encode_velodyne(&back), bytes);

    let calib_text = format_calib(&spec.calib);
    println!("calib:\n{calib_text}");
    assert_eq!(parse_calib(&calib_text).unwrap(), spec.calib);

    println!("labels:\n{}", format_labels(&scene.labels));

    // 2D detections: `u_min v_min u_max v_max confidence h l w`, dims from the 2D detector
    let dets: Vec<Detection2DInput> = scene
        .labels
        .iter()
        .map(|r| Detection2DInput { box2: r.box2, confidence: 0.9, dims: [r.h, r.l, r.w] })
        .chain([Detection2DInput { box2: Box2::new(10.0, 150.0, 60.0, 200.0).unwrap(), confidence: 0.2, dims: [1.5, 3.9, 1.6] }])
        .collect();
    let text = format_detections_2d(&dets);
    println!("2D detections:\n{text}");
    assert_eq!(parse_detections(&text).unwrap().len(), dets.len());
}
