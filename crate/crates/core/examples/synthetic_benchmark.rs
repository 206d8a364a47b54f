//! The whole pipeline through the command layer: synthesize train and eval sets,
//! fit with oracle 2D boxes, train stage 1 and stage 2, and report AP after each step.
//!
//! `cargo run --release --example synthetic_benchmark -- [train scenes] [eval scenes] [iterations]`

use std::time::Instant;

use frustum3d::cli::{cmd_eval, cmd_fit, cmd_synth, cmd_train, load_kv, PipelineConfig, SynthSettings};
use frustum3d::refine_net::RefineStage;

fn arg(i: usize, default: usize) -> usize {
    std::env::args().nth(i).map_or(default, |s| s.parse().expect("counts must be integers"))
}

fn main() {
    let (n_train, n_eval, iterations) = (arg(1, 500), arg(2, 100), arg(3, 2000));
    let root = std::env::temp_dir().join("frustum3d_benchmark");
    let _ = std::fs::remove_dir_all(&root);
    let t = Instant::now();
    cmd_synth(&SynthSettings { scenes: n_eval, seed: 0, ..Default::default() }, &root.join("eval")).unwrap();
    cmd_synth(&SynthSettings { scenes: n_train, seed: 1, ..Default::default() }, &root.join("train")).unwrap();
    println!("synthesized {n_train} + {n_eval} scenes in {:.1}s", t.elapsed().as_secs_f64());

    let base = [
        format!("data_dir={}", root.join("eval").display()),
        format!("output_dir={}", root.join("out").display()),
        format!("train.data_dir={}", root.join("train").display()),
        "oracle_2d=true".into(),
        format!("train.iterations={iterations}"),
        "train.batch_size=32".into(),
        "train.learning_rate=0.003".into(),
        "train.momentum=0.9".into(),
        "train.reg_weight=30".into(),
        "train.log_every=250".into(),
        "net.widths=8,16,32,32".into(),
        "net.hidden=64".into(),
    ];
    let config = |extra: &str| {
        let mut o = base.to_vec();
        if !extra.is_empty() {
            o.push(extra.to_string());
        }
        PipelineConfig::from_kv(&load_kv(None, &o).unwrap()).unwrap()
    };
    let step = |stop: &str| {
        let cfg = config(&format!("stop_after={stop}"));
        let t = Instant::now();
        let summary = cmd_fit(&cfg).unwrap();
        let report = cmd_eval(&cfg).unwrap();
        println!("--- after {stop}: {} detections, {:.1}s", summary.detections, t.elapsed().as_secs_f64());
        print!("{}", report.to_table());
        let iou = report.cells.iter().find(|c| c.mode.name() == "bev" && c.threshold == 0.5).and_then(|c| c.mean_iou);
        println!("mean BEV IoU of matches: {}", iou.map_or("n/a".into(), |v| format!("{v:.4}")));
    };

    step("fit");
    for stage in [RefineStage::One, RefineStage::Two] {
        let t = Instant::now();
        cmd_train(&config(""), stage, |r| println!("stage {}: {r}", stage.number())).unwrap();
        println!("trained stage {} in {:.1}s", stage.number(), t.elapsed().as_secs_f64());
    }
    step("stage1");
    step("stage2");
}
