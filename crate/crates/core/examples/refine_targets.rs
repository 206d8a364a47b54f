//! Seven-element box regression targets in the normalized context frame, and the
//! quartic solve that turns them back into a box.
//!
//! `cargo run --example refine_targets`

use frustum3d::geometry::{Box3, Vec3};
use frustum3d::refine_net::targets::real_polynomial_roots;
use frustum3d::refine_net::{decode_box, encode_targets, expand_context, CanonicalAnchor, RegressionTarget7};

fn main() {
    let anchor = CanonicalAnchor::default();
    let fitted = Box3::new(Vec3::new(12.0, -3.0, -0.95), 1.5, 4.0, 1.7, 0.4).unwrap();
    let truth = Box3::new(Vec3::new(12.3, -2.9, -0.9), 1.6, 4.4, 1.8, 0.55).unwrap();
    let ctx = expand_context(&fitted);
    println!("anchor {anchor:?}\ncontext {:?}", ctx.expanded);

    let t = encode_targets(&anchor, &ctx, &truth).unwrap();
    println!("targets {:?}", t.to_array());
    println!("decoded {:?}", decode_box(&anchor, &ctx, &t).unwrap());
    println!("zero targets give the fitted box back: {:?}", decode_box(&anchor, &ctx, &RegressionTarget7::default()).unwrap());

    // (T - 1)(T - 2)(T + 3)(T² + 1)
    println!("real roots of a quintic: {:?}", real_polynomial_roots(&[1.0, 0.0, -6.0, 6.0, -7.0, 6.0]));
}
