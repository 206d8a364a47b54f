//! Log-ratio dimension encoding relative to class means and its SmoothL1 loss.
//!
//! `cargo run --example dimension_priors`

use frustum3d::priors::{decode_dims, dimension_loss, encode_dims, DimensionLossConfig, MeanDims};

fn main() {
    let mean = MeanDims::default();
    let cfg = DimensionLossConfig::new(1.0).unwrap();
    let truth = [1.62, 4.35, 1.74];
    let target = encode_dims(truth, &mean).unwrap();
    println!("mean {mean:?}\ntruth {truth:?} -> delta {target:?}");
    for pred in [truth, [1.5, 3.9, 1.6], [2.5, 6.0, 2.2]] {
        let p = encode_dims(pred, &mean).unwrap();
        println!("pred {pred:?}: loss {:.5}, decoded back {:?}", dimension_loss(&p, &target, true, &cfg), decode_dims(&p, &mean));
    }
}
