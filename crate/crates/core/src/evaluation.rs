//! COCO-style single-class detection scoring.
//!
//! Matching is greedy in descending score order (ties by input index): each
//! detection takes the still-unmatched ground truth it overlaps most, provided
//! the IoU reaches the threshold. AP is the mean of the interpolated precision
//! envelope sampled at 101 recall levels (or 11, VOC style).
//!
//! Size-binned AP follows the COCO area-range convention: ground truths
//! outside the bin are ignored, detections that match an ignored ground truth
//! drop out of the ranking, and unmatched detections stay false positives.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::annotations::{size_bin, BoundingBox, SizeBin};

/// Largest instance [`brute_force_ap`] accepts.
pub const ORACLE_MAX_DETECTIONS: usize = 10;

/// IoU at which [`EvalReport::mean_iou`] pairs are formed.
pub const MEAN_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("detection score {0} outside [0, 1]")]
    BadScore(f64),
    #[error("IoU threshold {0} outside (0, 1]")]
    BadThreshold(f64),
    #[error("oracle limited to {ORACLE_MAX_DETECTIONS} detections, got {0}")]
    TooLarge(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub score: f64,
}

impl Detection {
    pub fn new(bbox: BoundingBox, score: f64) -> Result<Self, EvalError> {
        if !(0.0..=1.0).contains(&score) {
            return Err(EvalError::BadScore(score));
        }
        Ok(Self { bbox, score })
    }
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

fn check_threshold(t: f64) -> Result<(), EvalError> {
    if t > 0.0 && t <= 1.0 {
        Ok(())
    } else {
        Err(EvalError::BadThreshold(t))
    }
}

/// Detection indices sorted by descending score, ties by index.
pub fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    order
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    TruePositive,
    FalsePositive,
    /// Matched a ground truth that is excluded from this evaluation.
    Ignored,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Detection indices in the order they were matched.
    pub order: Vec<usize>,
    /// Per detection (input index): outcome and the ground truth it took.
    pub outcomes: Vec<Outcome>,
    pub det_to_gt: Vec<Option<usize>>,
    pub gt_to_det: Vec<Option<usize>>,
    /// IoU of each detection with its matched ground truth (0 if unmatched).
    pub matched_iou: Vec<f64>,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// Greedy matching where ground truths flagged in `gt_ignored` only absorb
/// detections that found no eligible ground truth.
pub fn match_with_ignore(
    dets: &[Detection],
    gts: &[BoundingBox],
    gt_ignored: &[bool],
    iou_threshold: f64,
) -> MatchResult {
    assert_eq!(gts.len(), gt_ignored.len());
    let order = score_order(dets);
    let mut outcomes = vec![Outcome::FalsePositive; dets.len()];
    let mut det_to_gt = vec![None; dets.len()];
    let mut gt_to_det = vec![None; gts.len()];
    let mut matched_iou = vec![0.0; dets.len()];
    for &d in &order {
        for want_ignored in [false, true] {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if gt_ignored[g] != want_ignored || gt_to_det[g].is_some() {
                    continue;
                }
                let v = iou(&dets[d].bbox, gt);
                if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                    best = Some((g, v));
                }
            }
            if let Some((g, v)) = best {
                gt_to_det[g] = Some(d);
                det_to_gt[d] = Some(g);
                matched_iou[d] = v;
                outcomes[d] = if want_ignored {
                    Outcome::Ignored
                } else {
                    Outcome::TruePositive
                };
                break;
            }
        }
    }
    let tp = outcomes.iter().filter(|&&o| o == Outcome::TruePositive).count();
    let fp = outcomes.iter().filter(|&&o| o == Outcome::FalsePositive).count();
    let eligible = gt_ignored.iter().filter(|&&i| !i).count();
    MatchResult {
        order,
        outcomes,
        det_to_gt,
        gt_to_det,
        matched_iou,
        tp,
        fp,
        fn_: eligible - tp,
    }
}

pub fn match_detections(dets: &[Detection], gts: &[BoundingBox], iou_threshold: f64) -> Result<MatchResult, EvalError> {
    check_threshold(iou_threshold)?;
    Ok(match_with_ignore(dets, gts, &vec![false; gts.len()], iou_threshold))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    /// Envelope sampled at recall 0.00, 0.01, ..., 1.00.
    #[default]
    Coco101,
    /// Envelope sampled at recall 0.0, 0.1, ..., 1.0.
    Voc11,
}

impl Interpolation {
    pub fn points(self) -> usize {
        match self {
            Interpolation::Coco101 => 101,
            Interpolation::Voc11 => 11,
        }
    }
}

/// AP of a ranked list of true/false positive flags against `n_gt` ground truths.
///
/// With no ground truths, AP is 1 for an empty ranking and 0 otherwise.
pub fn ap_from_ranked(tp_flags: &[bool], n_gt: usize, interp: Interpolation) -> f64 {
    if n_gt == 0 {
        return if tp_flags.is_empty() { 1.0 } else { 0.0 };
    }
    let mut tp_cum = Vec::with_capacity(tp_flags.len());
    let mut precision = Vec::with_capacity(tp_flags.len());
    let mut tp = 0usize;
    for (i, &hit) in tp_flags.iter().enumerate() {
        tp += hit as usize;
        tp_cum.push(tp);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let steps = interp.points() - 1;
    let mut total = 0.0;
    let mut cursor = 0;
    for k in 0..=steps {
        // recall >= k/steps  <=>  tp * steps >= k * n_gt, exact in integers.
        while cursor < tp_cum.len() && tp_cum[cursor] * steps < k * n_gt {
            cursor += 1;
        }
        if cursor < tp_cum.len() {
            total += precision[cursor];
        }
    }
    total / (steps + 1) as f64
}

/// Raw `(recall, precision)` after each ranked detection.
pub fn pr_points(tp_flags: &[bool], n_gt: usize) -> Vec<PrPoint> {
    let mut tp = 0usize;
    tp_flags
        .iter()
        .enumerate()
        .map(|(i, &hit)| {
            tp += hit as usize;
            PrPoint {
                recall: if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 },
                precision: tp as f64 / (i + 1) as f64,
            }
        })
        .collect()
}

fn ranked_flags(m: &MatchResult) -> Vec<bool> {
    m.order
        .iter()
        .filter(|&&d| m.outcomes[d] != Outcome::Ignored)
        .map(|&d| m.outcomes[d] == Outcome::TruePositive)
        .collect()
}

pub fn average_precision(dets: &[Detection], gts: &[BoundingBox], iou_threshold: f64) -> Result<f64, EvalError> {
    average_precision_with(dets, gts, iou_threshold, Interpolation::Coco101)
}

pub fn average_precision_with(
    dets: &[Detection],
    gts: &[BoundingBox],
    iou_threshold: f64,
    interp: Interpolation,
) -> Result<f64, EvalError> {
    let m = match_detections(dets, gts, iou_threshold)?;
    Ok(ap_from_ranked(&ranked_flags(&m), gts.len(), interp))
}

/// Per-bin AP; `None` where the bin has no ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BinnedAp {
    #[serde(serialize_with = "serialize_or_na")]
    pub small: Option<f64>,
    #[serde(serialize_with = "serialize_or_na")]
    pub medium: Option<f64>,
    #[serde(serialize_with = "serialize_or_na")]
    pub large: Option<f64>,
}

impl BinnedAp {
    pub fn get(&self, bin: SizeBin) -> Option<f64> {
        match bin {
            SizeBin::Small => self.small,
            SizeBin::Medium => self.medium,
            SizeBin::Large => self.large,
        }
    }
}

pub fn size_binned_ap(dets: &[Detection], gts: &[BoundingBox], iou_threshold: f64) -> Result<BinnedAp, EvalError> {
    let report = evaluate(
        &[ImageEval {
            detections: dets.to_vec(),
            ground_truth: gts.to_vec(),
        }],
        &EvalConfig {
            iou_threshold,
            ..EvalConfig::default()
        },
    )?;
    Ok(report.binned())
}

/// Mean IoU over true-positive pairs, `None` without any.
pub fn mean_iou(m: &MatchResult) -> Option<f64> {
    let ious: Vec<f64> = m
        .outcomes
        .iter()
        .zip(&m.matched_iou)
        .filter(|(o, _)| **o == Outcome::TruePositive)
        .map(|(_, &v)| v)
        .collect();
    if ious.is_empty() {
        None
    } else {
        Some(ious.iter().sum::<f64>() / ious.len() as f64)
    }
}

/// Reference AP for small instances, written independently of
/// [`average_precision`]: its own matching loop, and each of the 101 samples
/// is a literal maximum over every ranked prefix.
pub fn brute_force_ap(dets: &[Detection], gts: &[BoundingBox], iou_threshold: f64) -> Result<f64, EvalError> {
    check_threshold(iou_threshold)?;
    if dets.len() > ORACLE_MAX_DETECTIONS {
        return Err(EvalError::TooLarge(dets.len()));
    }
    if gts.is_empty() {
        return Ok(if dets.is_empty() { 1.0 } else { 0.0 });
    }
    // Rank: repeatedly pick the highest remaining score, lowest index on ties.
    let mut remaining: Vec<usize> = (0..dets.len()).collect();
    let mut ranked = Vec::new();
    while !remaining.is_empty() {
        let mut pick = 0;
        for j in 1..remaining.len() {
            if dets[remaining[j]].score > dets[remaining[pick]].score {
                pick = j;
            }
        }
        ranked.push(remaining.remove(pick));
    }
    let mut taken = vec![false; gts.len()];
    let mut hits = Vec::new();
    for &d in &ranked {
        let candidates: Vec<(usize, f64)> = (0..gts.len())
            .filter(|&g| !taken[g])
            .map(|g| (g, iou(&dets[d].bbox, &gts[g])))
            .filter(|&(_, v)| v >= iou_threshold)
            .collect();
        let best = candidates.iter().fold(None::<(usize, f64)>, |acc, &(g, v)| match acc {
            Some((_, bv)) if bv >= v => acc,
            _ => Some((g, v)),
        });
        match best {
            Some((g, _)) => {
                taken[g] = true;
                hits.push(true);
            }
            None => hits.push(false),
        }
    }
    let mut sum = 0.0;
    for k in 0..=100 {
        let r = k as f64 / 100.0;
        let mut best = 0.0f64;
        for n in 1..=hits.len() {
            let tp = hits[..n].iter().filter(|&&h| h).count();
            let recall = tp as f64 / gts.len() as f64;
            let precision = tp as f64 / n as f64;
            if recall >= r {
                best = best.max(precision);
            }
        }
        sum += best;
    }
    Ok(sum / 101.0)
}

/// Detections and ground truth of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEval {
    pub detections: Vec<Detection>,
    pub ground_truth: Vec<BoundingBox>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub interpolation: Interpolation,
    /// Also report AP averaged over IoU thresholds 0.50:0.05:0.95.
    pub sweep: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            interpolation: Interpolation::Coco101,
            sweep: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Dataset-level scores. AP values are fractions in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub iou_threshold: f64,
    pub interpolation: Interpolation,
    pub ap: f64,
    #[serde(serialize_with = "serialize_or_na", skip_serializing_if = "Option::is_none")]
    pub ap_50_95: Option<f64>,
    #[serde(serialize_with = "serialize_or_na")]
    pub mean_iou: Option<f64>,
    #[serde(serialize_with = "serialize_or_na")]
    pub ap_small: Option<f64>,
    #[serde(serialize_with = "serialize_or_na")]
    pub ap_medium: Option<f64>,
    #[serde(serialize_with = "serialize_or_na")]
    pub ap_large: Option<f64>,
    pub counts: Counts,
    pub pr_points: Vec<PrPoint>,
}

impl EvalReport {
    pub fn binned(&self) -> BinnedAp {
        BinnedAp {
            small: self.ap_small,
            medium: self.ap_medium,
            large: self.ap_large,
        }
    }
}

fn serialize_or_na<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(x) => s.serialize_f64(*x),
        None => s.serialize_str("n/a"),
    }
}

/// Ranked outcome flags pooled over images (score descending, then image
/// index, then rank within the image) and the number of eligible ground truths.
fn pooled(images: &[ImageEval], iou_threshold: f64, bin: Option<SizeBin>) -> (Vec<bool>, usize, Counts) {
    let mut entries: Vec<(f64, usize, usize, bool)> = Vec::new();
    let mut n_gt = 0;
    let mut counts = Counts { tp: 0, fp: 0, fn_: 0 };
    for (img, ev) in images.iter().enumerate() {
        let ignored: Vec<bool> = ev
            .ground_truth
            .iter()
            .map(|g| bin.is_some_and(|b| size_bin(g) != b))
            .collect();
        n_gt += ignored.iter().filter(|&&i| !i).count();
        let m = match_with_ignore(&ev.detections, &ev.ground_truth, &ignored, iou_threshold);
        counts.tp += m.tp;
        counts.fp += m.fp;
        counts.fn_ += m.fn_;
        for (rank, &d) in m.order.iter().enumerate() {
            match m.outcomes[d] {
                Outcome::Ignored => {}
                o => entries.push((ev.detections[d].score, img, rank, o == Outcome::TruePositive)),
            }
        }
    }
    entries.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    (entries.into_iter().map(|e| e.3).collect(), n_gt, counts)
}

/// Scores a whole dataset.
pub fn evaluate(images: &[ImageEval], config: &EvalConfig) -> Result<EvalReport, EvalError> {
    check_threshold(config.iou_threshold)?;
    for d in images.iter().flat_map(|i| &i.detections) {
        if !(0.0..=1.0).contains(&d.score) {
            return Err(EvalError::BadScore(d.score));
        }
    }
    let (flags, n_gt, counts) = pooled(images, config.iou_threshold, None);
    let ap = ap_from_ranked(&flags, n_gt, config.interpolation);
    let pr = pr_points(&flags, n_gt);

    let mut per_bin = [None; 3];
    for bin in SizeBin::ALL {
        let (f, n, _) = pooled(images, config.iou_threshold, Some(bin));
        if n > 0 {
            per_bin[bin.index()] = Some(ap_from_ranked(&f, n, config.interpolation));
        }
    }

    let mut tp_ious = Vec::new();
    for ev in images {
        let m = match_with_ignore(
            &ev.detections,
            &ev.ground_truth,
            &vec![false; ev.ground_truth.len()],
            MEAN_IOU_THRESHOLD,
        );
        tp_ious.extend(
            m.outcomes
                .iter()
                .zip(&m.matched_iou)
                .filter(|(o, _)| **o == Outcome::TruePositive)
                .map(|(_, &v)| v),
        );
    }
    let mean_iou = if tp_ious.is_empty() {
        None
    } else {
        Some(tp_ious.iter().sum::<f64>() / tp_ious.len() as f64)
    };

    let ap_50_95 = config.sweep.then(|| {
        let aps: Vec<f64> = (0..10)
            .map(|k| {
                let t = (50 + 5 * k) as f64 / 100.0;
                let (f, n, _) = pooled(images, t, None);
                ap_from_ranked(&f, n, config.interpolation)
            })
            .collect();
        aps.iter().sum::<f64>() / aps.len() as f64
    });

    Ok(EvalReport {
        iou_threshold: config.iou_threshold,
        interpolation: config.interpolation,
        ap,
        ap_50_95,
        mean_iou,
        ap_small: per_bin[0],
        ap_medium: per_bin[1],
        ap_large: per_bin[2],
        counts,
        pr_points: pr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x0: u32, y0: u32, x1: u32, y1: u32) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    fn d(bx: BoundingBox, s: f64) -> Detection {
        Detection::new(bx, s).unwrap()
    }

    #[test]
    fn iou_examples() {
        let a = b(0, 0, 10, 10);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &b(20, 20, 30, 30)), 0.0);
        assert_eq!(iou(&a, &b(10, 0, 20, 10)), 0.0);
        assert!((iou(&a, &b(5, 0, 15, 10)) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn match_examples() {
        let gt = b(0, 0, 10, 10);
        let m = match_detections(&[d(gt, 0.9)], &[gt], 0.5).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_), (1, 0, 0));
        let m = match_detections(&[d(gt, 0.9)], &[], 0.5).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_), (0, 1, 0));
        let m = match_detections(&[], &[gt], 0.5).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_), (0, 0, 1));
        assert!(match_detections(&[], &[], 0.0).is_err());
    }

    #[test]
    fn higher_score_claims_ground_truth_first() {
        let gt = b(0, 0, 10, 10);
        let dets = [d(b(0, 0, 10, 9), 0.4), d(b(0, 0, 10, 10), 0.8)];
        let m = match_detections(&dets, &[gt], 0.5).unwrap();
        assert_eq!(m.order, vec![1, 0]);
        assert_eq!(m.outcomes, vec![Outcome::FalsePositive, Outcome::TruePositive]);
    }

    #[test]
    fn ap_examples() {
        let g1 = b(0, 0, 10, 10);
        let g2 = b(50, 50, 60, 60);
        assert_eq!(average_precision(&[d(g1, 1.0)], &[g1], 0.5).unwrap(), 1.0);
        assert_eq!(average_precision(&[], &[g1], 0.5).unwrap(), 0.0);
        assert_eq!(average_precision(&[], &[], 0.5).unwrap(), 1.0);
        assert_eq!(average_precision(&[d(g1, 0.5)], &[], 0.5).unwrap(), 0.0);
        // Ranked TP, FP, TP over two ground truths: precision 1 up to recall 0.5,
        // then 2/3 up to recall 1 -> (51 * 1 + 50 * 2/3) / 101.
        let dets = [d(g1, 0.9), d(b(100, 100, 110, 110), 0.8), d(g2, 0.7)];
        let ap = average_precision(&dets, &[g1, g2], 0.5).unwrap();
        let expected = (51.0 + 50.0 * 2.0 / 3.0) / 101.0;
        assert!((ap - expected).abs() < 1e-12);
        assert!((ap - 0.834_983_498_349_835).abs() < 1e-12);
        assert!((brute_force_ap(&dets, &[g1, g2], 0.5).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn voc_interpolation() {
        // Same ranking, 11 samples: recall 0..0.5 -> 1 (6 samples), 0.6..1.0 -> 2/3 (5).
        let ap = ap_from_ranked(&[true, false, true], 2, Interpolation::Voc11);
        assert!((ap - (6.0 + 5.0 * 2.0 / 3.0) / 11.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_size_limit() {
        let g = b(0, 0, 10, 10);
        let dets = vec![d(g, 0.5); 11];
        assert_eq!(brute_force_ap(&dets, &[g], 0.5), Err(EvalError::TooLarge(11)));
    }

    #[test]
    fn binned_examples() {
        let small = b(0, 0, 10, 10);
        let medium = b(100, 100, 150, 150);
        let large = b(200, 200, 320, 320);
        let r = size_binned_ap(&[d(small, 0.9)], &[small], 0.5).unwrap();
        assert_eq!((r.small, r.medium, r.large), (Some(1.0), None, None));
        let all = [small, medium, large];
        let dets: Vec<Detection> = all.iter().map(|&g| d(g, 0.9)).collect();
        let r = size_binned_ap(&dets, &all, 0.5).unwrap();
        assert_eq!((r.small, r.medium, r.large), (Some(1.0), Some(1.0), Some(1.0)));
    }

    #[test]
    fn out_of_bin_matches_are_not_penalized() {
        let small = b(0, 0, 10, 10);
        let medium = b(100, 100, 150, 150);
        // The medium detection outranks the small one; in the small bin it must vanish.
        let dets = [d(medium, 0.95), d(small, 0.5)];
        let r = size_binned_ap(&dets, &[small, medium], 0.5).unwrap();
        assert_eq!(r.small, Some(1.0));
        // An unmatched detection still counts against every bin.
        let dets = [d(b(300, 300, 310, 310), 0.95), d(small, 0.5)];
        let r = size_binned_ap(&dets, &[small, medium], 0.5).unwrap();
        assert!(r.small.unwrap() < 1.0);
    }

    #[test]
    fn mean_iou_examples() {
        let g = b(0, 0, 10, 10);
        let m = match_detections(&[d(g, 1.0)], &[g], 0.5).unwrap();
        assert_eq!(mean_iou(&m), Some(1.0));
        let m = match_detections(&[], &[g], 0.5).unwrap();
        assert_eq!(mean_iou(&m), None);
        // IoU 0.6 and 0.8 against 10x10 boxes: shifted widths 6/10 and 8/10.
        let g2 = b(100, 0, 110, 10);
        let dets = [d(b(0, 0, 6, 10), 0.9), d(b(100, 0, 108, 10), 0.8)];
        let m = match_detections(&dets, &[g, g2], 0.5).unwrap();
        assert!((mean_iou(&m).unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn dataset_evaluation_pools_images() {
        let g = b(0, 0, 10, 10);
        let images = [
            ImageEval {
                detections: vec![d(g, 1.0)],
                ground_truth: vec![g],
            },
            ImageEval {
                detections: vec![],
                ground_truth: vec![g],
            },
        ];
        let r = evaluate(&images, &EvalConfig::default()).unwrap();
        assert_eq!(r.counts, Counts { tp: 1, fp: 0, fn_: 1 });
        // Precision 1 up to recall 0.5 -> 51/101.
        assert!((r.ap - 51.0 / 101.0).abs() < 1e-12);
        assert_eq!(r.mean_iou, Some(1.0));
        assert_eq!(r.ap_medium, None);
        assert_eq!(
            r.pr_points,
            vec![PrPoint {
                recall: 0.5,
                precision: 1.0
            }]
        );
    }

    #[test]
    fn sweep_is_optional() {
        let g = b(0, 0, 10, 10);
        let images = [ImageEval {
            detections: vec![d(b(0, 0, 10, 8), 1.0)],
            ground_truth: vec![g],
        }];
        let r = evaluate(
            &images,
            &EvalConfig {
                sweep: true,
                ..EvalConfig::default()
            },
        )
        .unwrap();
        // IoU 0.8 passes thresholds 0.50..0.80 (7 of 10).
        assert!((r.ap_50_95.unwrap() - 0.7).abs() < 1e-12);
        let r = evaluate(&images, &EvalConfig::default()).unwrap();
        assert_eq!(r.ap_50_95, None);
    }

    #[test]
    fn bad_scores_rejected() {
        assert!(Detection::new(b(0, 0, 1, 1), 1.5).is_err());
        assert!(Detection::new(b(0, 0, 1, 1), -0.1).is_err());
    }
}
