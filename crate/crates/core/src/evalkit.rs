//! Detection evaluation: KITTI difficulty buckets, greedy score-ordered matching,
//! and N-point interpolated average precision over BEV or 3D IoU.

use std::fmt::Write as _;

use thiserror::Error;

use crate::geometry::{iou_3d, iou_bev, Box3};
use crate::kitti_io::LabelRecord;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no ground-truth boxes in the evaluated set")]
    NoGroundTruth,
    #[error("invalid evaluation config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard];

    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Moderate => "moderate",
            Difficulty::Hard => "hard",
        }
    }
}

/// KITTI buckets: (min 2D height px, max occlusion, max truncation).
const BUCKETS: [(Difficulty, f64, i32, f64); 3] = [
    (Difficulty::Easy, 40.0, 0, 0.15),
    (Difficulty::Moderate, 25.0, 1, 0.30),
    (Difficulty::Hard, 25.0, 2, 0.50),
];

/// Easiest bucket whose thresholds the record clears; `None` means ignored.
pub fn assign_difficulty(rec: &LabelRecord) -> Option<Difficulty> {
    BUCKETS
        .iter()
        .find(|(_, h, occ, trunc)| rec.box2.height() >= *h && rec.occlusion <= *occ && rec.truncation <= *trunc)
        .map(|b| b.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IouMode {
    Bev,
    Box3D,
}

impl IouMode {
    pub fn name(self) -> &'static str {
        match self {
            IouMode::Bev => "bev",
            IouMode::Box3D => "3d",
        }
    }

    pub fn iou(self, a: &Box3, b: &Box3) -> f64 {
        match self {
            IouMode::Bev => iou_bev(a, b),
            IouMode::Box3D => iou_3d(a, b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub mode: IouMode,
    /// 11 (recall anchors 0, 0.1, …, 1) or 40 (1/40, …, 1).
    pub points: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { iou_threshold: 0.5, mode: IouMode::Bev, points: 11 }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(EvalError::InvalidConfig(format!("IoU threshold {} outside (0, 1]", self.iou_threshold)));
        }
        if self.points != 11 && self.points != 40 {
            return Err(EvalError::InvalidConfig(format!("{} interpolation points (use 11 or 40)", self.points)));
        }
        Ok(())
    }

    fn anchors(&self) -> Vec<f64> {
        if self.points == 40 {
            (1..=40).map(|k| k as f64 / 40.0).collect()
        } else {
            (0..=10).map(|k| k as f64 / 10.0).collect()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtBox {
    pub bbox: Box3,
    pub ignored: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Tp,
    Fp,
    /// Matched a ground truth that does not count at this difficulty.
    Ignored,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// `(score, outcome)` in input order.
    pub detections: Vec<(f64, Outcome)>,
    /// IoU of each true positive with its ground truth, in input order.
    pub tp_ious: Vec<f64>,
    pub false_negatives: usize,
    pub num_gt: usize,
}

/// Indices sorted by descending score; equal scores keep input order.
fn rank(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Greedy matching in descending score order: each detection claims the unclaimed
/// counted ground truth of maximal IoU at or above the threshold. Failing that, a
/// detection overlapping an ignored ground truth is itself ignored.
pub fn match_detections(dets: &[(Box3, f64)], gts: &[GtBox], cfg: &EvalConfig) -> Matching {
    let scores: Vec<f64> = dets.iter().map(|d| d.1).collect();
    let mut claimed = vec![false; gts.len()];
    let mut outcome = vec![(Outcome::Fp, 0.0); dets.len()];
    for i in rank(&scores) {
        let mut best: Option<(usize, f64)> = None;
        let mut hits_ignored = false;
        for (j, gt) in gts.iter().enumerate() {
            let iou = cfg.mode.iou(&dets[i].0, &gt.bbox);
            if iou < cfg.iou_threshold {
                continue;
            }
            if gt.ignored {
                hits_ignored = true;
            } else if !claimed[j] && best.is_none_or(|(_, b)| iou > b) {
                best = Some((j, iou));
            }
        }
        outcome[i] = match best {
            Some((j, iou)) => {
                claimed[j] = true;
                (Outcome::Tp, iou)
            }
            None if hits_ignored => (Outcome::Ignored, 0.0),
            None => (Outcome::Fp, 0.0),
        };
    }
    let num_gt = gts.iter().filter(|g| !g.ignored).count();
    let matched = claimed.iter().filter(|c| **c).count();
    Matching {
        detections: scores.iter().zip(&outcome).map(|(&s, &(o, _))| (s, o)).collect(),
        tp_ious: outcome.iter().filter(|(o, _)| *o == Outcome::Tp).map(|&(_, iou)| iou).collect(),
        false_negatives: num_gt - matched,
        num_gt,
    }
}

/// Precision/recall points of the pooled ranking, one per counted detection.
pub fn pr_curve(matchings: &[Matching]) -> Result<Vec<(f64, f64)>, EvalError> {
    let num_gt: usize = matchings.iter().map(|m| m.num_gt).sum();
    if num_gt == 0 {
        return Err(EvalError::NoGroundTruth);
    }
    let pooled: Vec<(f64, Outcome)> = matchings.iter().flat_map(|m| m.detections.iter().copied()).collect();
    let scores: Vec<f64> = pooled.iter().map(|p| p.0).collect();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut curve = Vec::new();
    for i in rank(&scores) {
        match pooled[i].1 {
            Outcome::Tp => tp += 1,
            Outcome::Fp => fp += 1,
            Outcome::Ignored => continue,
        }
        curve.push((tp as f64 / num_gt as f64, tp as f64 / (tp + fp) as f64));
    }
    Ok(curve)
}

/// Mean over recall anchors of the maximum precision at recall ≥ anchor.
pub fn average_precision(matchings: &[Matching], cfg: &EvalConfig) -> Result<f64, EvalError> {
    cfg.validate()?;
    let curve = pr_curve(matchings)?;
    let anchors = cfg.anchors();
    let sum: f64 = anchors
        .iter()
        .map(|&r| curve.iter().filter(|(rec, _)| *rec >= r - 1e-12).map(|p| p.1).fold(0.0, f64::max))
        .sum();
    Ok(sum / anchors.len() as f64)
}

/// One scene's evaluation input.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneEval {
    pub gts: Vec<(Box3, Option<Difficulty>)>,
    pub dets: Vec<(Box3, f64)>,
}

impl SceneEval {
    /// Ground truth counted at `level`: buckets are cumulative (hard includes easy).
    pub fn gts_at(&self, level: Difficulty) -> Vec<GtBox> {
        self.gts
            .iter()
            .map(|(b, d)| GtBox { bbox: *b, ignored: !d.is_some_and(|d| d <= level) })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportCell {
    pub difficulty: Difficulty,
    pub mode: IouMode,
    pub threshold: f64,
    /// `None` when the bucket holds no ground truth.
    pub ap: Option<f64>,
    pub mean_iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub points: usize,
    pub cells: Vec<ReportCell>,
}

pub fn evaluate(scenes: &[SceneEval], thresholds: &[f64], modes: &[IouMode], points: usize) -> Result<EvalReport, EvalError> {
    let mut cells = Vec::new();
    for &mode in modes {
        for &threshold in thresholds {
            let cfg = EvalConfig { iou_threshold: threshold, mode, points };
            cfg.validate()?;
            for difficulty in Difficulty::ALL {
                let ms: Vec<Matching> =
                    scenes.iter().map(|s| match_detections(&s.dets, &s.gts_at(difficulty), &cfg)).collect();
                let ap = match average_precision(&ms, &cfg) {
                    Ok(ap) => Some(ap),
                    Err(EvalError::NoGroundTruth) => None,
                    Err(e) => return Err(e),
                };
                let ious: Vec<f64> = ms.iter().flat_map(|m| m.tp_ious.iter().copied()).collect();
                let mean_iou = (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64);
                cells.push(ReportCell { difficulty, mode, threshold, ap, mean_iou });
            }
        }
    }
    Ok(EvalReport { points, cells })
}

fn fmt_opt(v: Option<f64>, scale: f64) -> String {
    v.map_or("-".to_string(), |x| format!("{:.4}", x * scale))
}

impl EvalReport {
    pub fn get(&self, difficulty: Difficulty, mode: IouMode, threshold: f64) -> Option<&ReportCell> {
        self.cells
            .iter()
            .find(|c| c.difficulty == difficulty && c.mode == mode && (c.threshold - threshold).abs() < 1e-12)
    }

    /// Human-readable table, AP in percent.
    pub fn to_table(&self) -> String {
        let mut s = format!("{}-point interpolated AP (%)\n", self.points);
        let _ = writeln!(s, "{:<6} {:>5} {:>10} {:>10} {:>10}", "mode", "iou", "easy", "moderate", "hard");
        let mut keys: Vec<(IouMode, f64)> = Vec::new();
        for c in &self.cells {
            if !keys.iter().any(|k| k.0 == c.mode && k.1 == c.threshold) {
                keys.push((c.mode, c.threshold));
            }
        }
        for (mode, t) in keys {
            let ap = |d| fmt_opt(self.get(d, mode, t).and_then(|c| c.ap), 100.0);
            let _ = writeln!(
                s,
                "{:<6} {:>5.2} {:>10} {:>10} {:>10}",
                mode.name(),
                t,
                ap(Difficulty::Easy),
                ap(Difficulty::Moderate),
                ap(Difficulty::Hard)
            );
        }
        s
    }

    /// `key=value` lines, e.g. `ap.bev.0.50.moderate=0.848485`.
    pub fn to_key_values(&self) -> String {
        let mut s = format!("points={}\n", self.points);
        for c in &self.cells {
            let key = format!("{}.{:.2}.{}", c.mode.name(), c.threshold, c.difficulty.name());
            let _ = writeln!(s, "ap.{key}={}", c.ap.map_or("nan".into(), |v| format!("{v:.6}")));
            let _ = writeln!(s, "mean_iou.{key}={}", c.mean_iou.map_or("nan".into(), |v| format!("{v:.6}")));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Box2, Vec3};

    fn rec(height: f64, occ: i32, trunc: f64) -> LabelRecord {
        LabelRecord {
            class: "Car".into(),
            truncation: trunc,
            occlusion: occ,
            alpha: 0.0,
            box2: Box2::new(100.0, 100.0, 150.0, 100.0 + height).unwrap(),
            h: 1.5,
            l: 4.0,
            w: 1.7,
            location: Vec3::new(0.0, 1.7, 10.0),
            rotation_y: 0.0,
            score: None,
        }
    }

    fn unit_at(x: f64) -> Box3 {
        Box3::new(Vec3::new(x, 0.0, 0.0), 1.0, 1.0, 1.0, 0.0).unwrap()
    }

    fn counted(bs: &[Box3]) -> Vec<GtBox> {
        bs.iter().map(|&bbox| GtBox { bbox, ignored: false }).collect()
    }

    #[test]
    fn difficulty_table() {
        assert_eq!(assign_difficulty(&rec(45.0, 0, 0.0)), Some(Difficulty::Easy));
        assert_eq!(assign_difficulty(&rec(30.0, 1, 0.2)), Some(Difficulty::Moderate));
        assert_eq!(assign_difficulty(&rec(45.0, 2, 0.4)), Some(Difficulty::Hard));
        assert_eq!(assign_difficulty(&rec(20.0, 0, 0.0)), None);
        assert_eq!(assign_difficulty(&rec(45.0, 3, 0.0)), None);
    }

    #[test]
    fn greedy_hand_case() {
        // Detection IoUs against GT 0: 0.8, 0.6, 0.4 (unit boxes shifted along x).
        let shift = |iou: f64| (1.0 - iou) / (1.0 + iou);
        let gts = counted(&[unit_at(0.0), unit_at(50.0)]);
        let dets = [(unit_at(shift(0.8)), 0.9), (unit_at(shift(0.6)), 0.8), (unit_at(shift(0.4)), 0.7)];
        let m = match_detections(&dets, &gts, &EvalConfig::default());
        let outs: Vec<Outcome> = m.detections.iter().map(|d| d.1).collect();
        assert_eq!(outs, [Outcome::Tp, Outcome::Fp, Outcome::Fp]);
        assert_eq!(m.false_negatives, 1);
        assert!((m.tp_ious[0] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn higher_score_wins_regardless_of_order() {
        let gts = counted(&[unit_at(0.0)]);
        let dets = [(unit_at(0.05), 0.3), (unit_at(0.0), 0.9)];
        let m = match_detections(&dets, &gts, &EvalConfig::default());
        assert_eq!(m.detections[0].1, Outcome::Fp);
        assert_eq!(m.detections[1].1, Outcome::Tp);
    }

    #[test]
    fn staircase_ap() {
        let gts = counted(&[unit_at(0.0), unit_at(10.0)]);
        let dets = [(unit_at(0.0), 0.9), (unit_at(30.0), 0.8), (unit_at(10.0), 0.7)];
        let cfg = EvalConfig::default();
        let ap = average_precision(&[match_detections(&dets, &gts, &cfg)], &cfg).unwrap();
        let hand = (6.0 + 5.0 * 2.0 / 3.0) / 11.0;
        assert!((ap - hand).abs() < 1e-12, "{ap}");
        let forty = EvalConfig { points: 40, ..cfg };
        let ap40 = average_precision(&[match_detections(&dets, &gts, &forty)], &forty).unwrap();
        assert!((ap40 - (20.0 + 20.0 * 2.0 / 3.0) / 40.0).abs() < 1e-12);
    }

    #[test]
    fn limits_and_errors() {
        let cfg = EvalConfig::default();
        let gts = counted(&[unit_at(0.0), unit_at(5.0)]);
        let perfect: Vec<(Box3, f64)> = gts.iter().map(|g| (g.bbox, 1.0)).collect();
        assert_eq!(average_precision(&[match_detections(&perfect, &gts, &cfg)], &cfg), Ok(1.0));
        assert_eq!(average_precision(&[match_detections(&[], &gts, &cfg)], &cfg), Ok(0.0));
        assert_eq!(average_precision(&[match_detections(&perfect, &[], &cfg)], &cfg), Err(EvalError::NoGroundTruth));
        assert!(EvalConfig { points: 12, ..cfg }.validate().is_err());
        assert!(EvalConfig { iou_threshold: 0.0, ..cfg }.validate().is_err());
    }

    #[test]
    fn ignored_ground_truth_is_neutral() {
        let cfg = EvalConfig::default();
        let gts = vec![GtBox { bbox: unit_at(0.0), ignored: false }, GtBox { bbox: unit_at(5.0), ignored: true }];
        let dets = [(unit_at(0.0), 0.5), (unit_at(5.0), 0.9)];
        let m = match_detections(&dets, &gts, &cfg);
        assert_eq!(m.detections[1].1, Outcome::Ignored);
        assert_eq!(m.num_gt, 1);
        assert_eq!(average_precision(&[m], &cfg), Ok(1.0));
    }

    #[test]
    fn ap_monotone_under_extra_detections() {
        let cfg = EvalConfig::default();
        let gts = counted(&[unit_at(0.0), unit_at(10.0), unit_at(20.0)]);
        let base = vec![(unit_at(0.0), 0.8), (unit_at(40.0), 0.7), (unit_at(10.0), 0.6)];
        let ap = |d: &[(Box3, f64)]| average_precision(&[match_detections(d, &gts, &cfg)], &cfg).unwrap();
        let a0 = ap(&base);
        let mut top_tp = base.clone();
        top_tp.push((unit_at(20.0), 0.95));
        assert!(ap(&top_tp) >= a0);
        let mut tail_fp = base.clone();
        tail_fp.push((unit_at(60.0), 0.1));
        assert!(ap(&tail_fp) <= a0);
    }

    #[test]
    fn bev_equals_3d_for_shared_heights() {
        let gts = counted(&[unit_at(0.0), unit_at(10.0)]);
        let dets = [(unit_at(0.3), 0.9), (unit_at(10.2), 0.8), (unit_at(20.0), 0.7)];
        for t in [0.5, 0.7] {
            let b = EvalConfig { iou_threshold: t, ..Default::default() };
            let d = EvalConfig { mode: IouMode::Box3D, ..b };
            let ab = average_precision(&[match_detections(&dets, &gts, &b)], &b).unwrap();
            let a3 = average_precision(&[match_detections(&dets, &gts, &d)], &d).unwrap();
            assert_eq!(ab, a3);
        }
    }

    #[test]
    fn report_round_trip_keys() {
        let s = SceneEval {
            gts: vec![(unit_at(0.0), Some(Difficulty::Moderate))],
            dets: vec![(unit_at(0.0), 1.0)],
        };
        let r = evaluate(&[s], &[0.5, 0.7], &[IouMode::Bev, IouMode::Box3D], 11).unwrap();
        assert_eq!(r.get(Difficulty::Easy, IouMode::Bev, 0.5).unwrap().ap, None);
        assert_eq!(r.get(Difficulty::Moderate, IouMode::Box3D, 0.7).unwrap().ap, Some(1.0));
        assert_eq!(r.get(Difficulty::Hard, IouMode::Bev, 0.5).unwrap().ap, Some(1.0));
        let kv = r.to_key_values();
        assert!(kv.contains("ap.bev.0.50.easy=nan"));
        assert!(kv.contains("ap.3d.0.70.hard=1.000000"));
        assert!(r.to_table().contains("100.0000"));
    }
}
