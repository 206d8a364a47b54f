//! Oriented box overlap in bird's-eye view and 3D.
//!
//! `cargo run --example box_iou`

use frustum3d::geometry::{iou_3d, iou_bev, Box3, Vec3};

fn main() {
    let car = Box3::new(Vec3::new(10.0, 2.0, -0.9), 1.5, 4.2, 1.8, 0.3).unwrap();
    println!("reference: {car:?}");
    for (label, other) in [
        ("identical", car),
        ("shifted 0.5 m along heading", Box3 { center: car.center + car.heading() * 0.5, ..car }),
        ("rotated 90°", Box3 { yaw: car.yaw + std::f64::consts::FRAC_PI_2, ..car }),
        ("raised 0.75 m", Box3 { center: car.center + Vec3::new(0.0, 0.0, 0.75), ..car }),
        ("half-turn (same footprint)", Box3 { yaw: car.yaw + std::f64::consts::PI, ..car }),
    ] {
        println!("{label:<28} bev {:.4}  3d {:.4}", iou_bev(&car, &other), iou_3d(&car, &other));
    }
}
