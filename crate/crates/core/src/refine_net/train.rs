use std::fmt;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::context::ContextVoxels;
use super::net::{softmax, NetInput, NetOutput, Network, N_CLASSES, N_REG};
use super::targets::RegressionTarget7;
use super::RefineError;
use crate::priors::{smooth_l1, smooth_l1_grad};

/// Class index of "car" in the logits; 0 is background.
pub const CAR_CLASS: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefineStage {
    One,
    Two,
}

impl RefineStage {
    /// BEV IoU with the ground truth at or above which a box is a positive.
    pub fn positive_iou(self) -> f64 {
        match self {
            RefineStage::One => 0.5,
            RefineStage::Two => 0.7,
        }
    }

    pub fn number(self) -> u8 {
        match self {
            RefineStage::One => 1,
            RefineStage::Two => 2,
        }
    }

    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(RefineStage::One),
            2 => Some(RefineStage::Two),
            _ => None,
        }
    }
}

pub fn assign_label(stage: RefineStage, bev_iou_with_gt: f64) -> bool {
    bev_iou_with_gt >= stage.positive_iou()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub voxels: ContextVoxels,
    pub positive: bool,
    /// Regression target; only used on positives.
    pub target: Option<RegressionTarget7>,
}

/// Softmax cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy(logits: [f64; N_CLASSES], label: usize) -> (f64, [f64; N_CLASSES]) {
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    let p = softmax(logits);
    let mut g = p;
    g[label] -= 1.0;
    (lse - logits[label], g)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub cls: f64,
    pub reg: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.cls + self.reg
    }
}

/// Per-sample loss and output gradients.
pub fn sample_loss(
    out: &NetOutput,
    sample: &Sample,
    reg_weight: f64,
) -> (LossParts, Option<[f64; N_REG]>, [f64; N_CLASSES]) {
    let (cls, d_logits) = cross_entropy(out.logits, if sample.positive { CAR_CLASS } else { 0 });
    let mut parts = LossParts { cls, reg: 0.0 };
    let d_reg = match (out.reg, sample.target) {
        (Some(pred), Some(t)) if sample.positive => {
            let t = t.to_array();
            let mut d = [0.0; N_REG];
            for i in 0..N_REG {
                let r = pred[i] - t[i];
                parts.reg += reg_weight * smooth_l1(r);
                d[i] = reg_weight * smooth_l1_grad(r);
            }
            Some(d)
        }
        (Some(_), _) => Some([0.0; N_REG]),
        _ => None,
    };
    (parts, d_reg, d_logits)
}

/// Mean loss over `batch` and its parameter gradient.
pub fn batch_gradient(
    net: &Network,
    batch: &[&Sample],
    reg_weight: f64,
) -> Result<(LossParts, Network), RefineError> {
    let mut grads = net.zeros_like();
    let mut sum = LossParts::default();
    for s in batch {
        let cache = net.forward(NetInput::Sparse(&s.voxels))?;
        let (parts, d_reg, d_logits) = sample_loss(&cache.output, s, reg_weight);
        sum.cls += parts.cls;
        sum.reg += parts.reg;
        net.backward(&cache, d_reg.as_ref(), &d_logits, &mut grads);
    }
    let n = batch.len().max(1) as f64;
    for t in grads.tensors_mut() {
        t.iter_mut().for_each(|v| *v /= n);
    }
    Ok((LossParts { cls: sum.cls / n, reg: sum.reg / n }, grads))
}

pub fn batch_loss(net: &Network, batch: &[&Sample], reg_weight: f64) -> Result<LossParts, RefineError> {
    let mut sum = LossParts::default();
    for s in batch {
        let out = net.infer(NetInput::Sparse(&s.voxels))?;
        let (p, _, _) = sample_loss(&out, s, reg_weight);
        sum.cls += p.cls;
        sum.reg += p.reg;
    }
    let n = batch.len().max(1) as f64;
    Ok(LossParts { cls: sum.cls / n, reg: sum.reg / n })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub positive_fraction: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub reg_weight: f64,
    pub seed: u64,
    /// Emit a progress record every this many iterations (and at the last one).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            positive_fraction: 0.5,
            iterations: 10_000,
            learning_rate: 0.0005,
            momentum: 0.0,
            reg_weight: 1.0,
            seed: 0,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), RefineError> {
        let bad = |m: &str| Err(RefineError::InvalidConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(0.0..=1.0).contains(&self.positive_fraction) {
            return bad("positive_fraction must lie in [0, 1]");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.log_every == 0 {
            return bad("log_every must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProgressRecord {
    pub iteration: usize,
    pub loss: f64,
    pub cls: f64,
    pub reg: f64,
}

impl fmt::Display for ProgressRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "iter={} loss={:.6} cls={:.6} reg={:.6}", self.iteration, self.loss, self.cls, self.reg)
    }
}

/// Draws `n` items from `pool`, without replacement when it is large enough.
fn draw<'a>(rng: &mut ChaCha8Rng, pool: &[&'a Sample], n: usize, out: &mut Vec<&'a Sample>) {
    if pool.len() >= n {
        out.extend(index::sample(rng, pool.len(), n).into_iter().map(|i| pool[i]));
    } else {
        out.extend((0..n).map(|_| pool[rng.random_range(0..pool.len())]));
    }
}

/// Mini-batch SGD. Single-threaded, so a fixed seed gives bit-identical parameters.
pub fn train(
    net: &mut Network,
    data: &[Sample],
    cfg: &TrainConfig,
    mut progress: impl FnMut(&ProgressRecord),
) -> Result<Vec<ProgressRecord>, RefineError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(RefineError::EmptyDataset);
    }
    let positives: Vec<&Sample> = data.iter().filter(|s| s.positive).collect();
    let negatives: Vec<&Sample> = data.iter().filter(|s| !s.positive).collect();
    let mut n_pos = (cfg.batch_size as f64 * cfg.positive_fraction).round() as usize;
    if negatives.is_empty() {
        n_pos = cfg.batch_size;
    }
    if n_pos > 0 && positives.is_empty() {
        return Err(RefineError::NoPositives);
    }
    let n_neg = cfg.batch_size - n_pos;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut velocity = net.zeros_like();
    let mut records = Vec::new();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for it in 1..=cfg.iterations {
        batch.clear();
        draw(&mut rng, &positives, n_pos, &mut batch);
        draw(&mut rng, &negatives, n_neg, &mut batch);
        let (parts, grads) = batch_gradient(net, &batch, cfg.reg_weight)?;
        sgd_step(net, &grads, &mut velocity, cfg.learning_rate, cfg.momentum);
        if it % cfg.log_every == 0 || it == cfg.iterations {
            let r = ProgressRecord { iteration: it, loss: parts.total(), cls: parts.cls, reg: parts.reg };
            progress(&r);
            records.push(r);
        }
    }
    Ok(records)
}

pub fn sgd_step(net: &mut Network, grads: &Network, velocity: &mut Network, lr: f64, momentum: f64) {
    for ((p, g), v) in net.tensors_mut().into_iter().zip(grads.tensors()).zip(velocity.tensors_mut()) {
        for ((p, g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
            *v = momentum * *v - lr * g;
            *p += *v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refine_net::net::NetArch;

    #[test]
    fn cross_entropy_values() {
        let (l, g) = cross_entropy([0.0, 0.0], 1);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(g, [0.5, -0.5]);
        let (l, _) = cross_entropy([-400.0, 400.0], 1);
        assert!(l >= 0.0 && l < 1e-300);
        let (l, _) = cross_entropy([-400.0, 400.0], 0);
        assert!((l - 800.0).abs() < 1e-9);
    }

    #[test]
    fn label_thresholds() {
        assert!(assign_label(RefineStage::One, 0.6));
        assert!(!assign_label(RefineStage::Two, 0.6));
        assert!(assign_label(RefineStage::One, 0.5));
        assert!(assign_label(RefineStage::Two, 0.7));
        assert!(!assign_label(RefineStage::One, 0.49));
    }

    #[test]
    fn regression_only_on_positives() {
        let out = NetOutput { reg: Some([1.0; 7]), logits: [0.0, 0.0] };
        let t = Some(RegressionTarget7::default());
        let neg = Sample { voxels: ContextVoxels::default(), positive: false, target: t };
        let (p, d, _) = sample_loss(&out, &neg, 1.0);
        assert_eq!(p.reg, 0.0);
        assert_eq!(d, Some([0.0; 7]));
        let pos = Sample { positive: true, ..neg };
        let (p, _, _) = sample_loss(&out, &pos, 1.0);
        assert!((p.reg - 7.0 * smooth_l1(1.0)).abs() < 1e-15);
    }

    #[test]
    fn dataset_errors() {
        let mut net = Network::new(NetArch { widths: vec![2], hidden: 0, regression: false }, 0).unwrap();
        let cfg = TrainConfig { batch_size: 4, iterations: 1, ..Default::default() };
        assert!(matches!(train(&mut net, &[], &cfg, |_| {}), Err(RefineError::EmptyDataset)));
        let negs = vec![Sample { voxels: ContextVoxels::default(), positive: false, target: None }];
        assert!(matches!(train(&mut net, &negs, &cfg, |_| {}), Err(RefineError::NoPositives)));
        let ok = TrainConfig { positive_fraction: 0.0, ..cfg };
        assert!(train(&mut net, &negs, &ok, |_| {}).is_ok());
    }

    #[test]
    fn progress_records_format() {
        let r = ProgressRecord { iteration: 3, loss: 1.5, cls: 1.0, reg: 0.5 };
        assert_eq!(r.to_string(), "iter=3 loss=1.500000 cls=1.000000 reg=0.500000");
    }
}
