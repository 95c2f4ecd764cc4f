//! Reference implementations for the evaluator, written from the definitions
//! and sharing nothing with the library beyond its data types.

#![allow(dead_code)]

use logattn_core::{BoundingBox, Detection, Rng};

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let w = (a.xmax.min(b.xmax) as i64 - a.xmin.max(b.xmin) as i64).max(0);
    let h = (a.ymax.min(b.ymax) as i64 - a.ymin.max(b.ymin) as i64).max(0);
    let inter = (w * h) as f64;
    let area = |r: &BoundingBox| ((r.xmax - r.xmin) as i64 * (r.ymax - r.ymin) as i64) as f64;
    if inter == 0.0 {
        0.0
    } else {
        inter / (area(a) + area(b) - inter)
    }
}

/// 0 small, 1 medium, 2 large.
pub fn bin_of(b: &BoundingBox) -> usize {
    let area = (b.xmax - b.xmin) as u64 * (b.ymax - b.ymin) as u64;
    if area <= 1024 {
        0
    } else if area <= 9216 {
        1
    } else {
        2
    }
}

/// Indices by descending score; among equal scores the earlier index first.
pub fn rank(dets: &[Detection]) -> Vec<usize> {
    let mut left: Vec<usize> = (0..dets.len()).collect();
    let mut out = Vec::new();
    while !left.is_empty() {
        let mut best = 0;
        for j in 1..left.len() {
            if dets[left[j]].score > dets[left[best]].score {
                best = j;
            }
        }
        out.push(left.remove(best));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Hit,
    Miss,
    Ignored,
}

/// Per detection (input order): verdict and matched ground truth. Ground
/// truths flagged `ignored` are only offered once no eligible one qualifies.
pub fn greedy_match(
    dets: &[Detection],
    gts: &[BoundingBox],
    ignored: &[bool],
    thr: f64,
) -> Vec<(Verdict, Option<usize>)> {
    let mut used = vec![false; gts.len()];
    let mut out = vec![(Verdict::Miss, None); dets.len()];
    for d in rank(dets) {
        for pass_ignored in [false, true] {
            let mut pick: Option<usize> = None;
            for g in 0..gts.len() {
                if used[g] || ignored[g] != pass_ignored {
                    continue;
                }
                let v = iou(&dets[d].bbox, &gts[g]);
                if v < thr {
                    continue;
                }
                if pick.is_none_or(|p| v > iou(&dets[d].bbox, &gts[p])) {
                    pick = Some(g);
                }
            }
            if let Some(g) = pick {
                used[g] = true;
                out[d] = (if pass_ignored { Verdict::Ignored } else { Verdict::Hit }, Some(g));
                break;
            }
        }
    }
    out
}

/// 101-point interpolated AP of a ranked hit list: at each recall level
/// k/100, the best precision of any prefix reaching it (compared exactly as
/// integers), averaged.
pub fn ap_of_hits(hits: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return if hits.is_empty() { 1.0 } else { 0.0 };
    }
    let mut total = 0.0;
    for k in 0..=100usize {
        let mut best = 0.0f64;
        for n in 1..=hits.len() {
            let tp = hits[..n].iter().filter(|&&h| h).count();
            if tp * 100 >= k * n_gt {
                best = best.max(tp as f64 / n as f64);
            }
        }
        total += best;
    }
    total / 101.0
}

fn ranked_hits(dets: &[Detection], verdicts: &[(Verdict, Option<usize>)]) -> Vec<bool> {
    rank(dets)
        .into_iter()
        .filter(|&d| verdicts[d].0 != Verdict::Ignored)
        .map(|d| verdicts[d].0 == Verdict::Hit)
        .collect()
}

pub fn ap(dets: &[Detection], gts: &[BoundingBox], thr: f64) -> f64 {
    let v = greedy_match(dets, gts, &vec![false; gts.len()], thr);
    ap_of_hits(&ranked_hits(dets, &v), gts.len())
}

/// AP restricted to one size bin (ground truths of other bins ignored);
/// `None` when the bin holds no ground truth.
pub fn binned_ap(dets: &[Detection], gts: &[BoundingBox], thr: f64, bin: usize) -> Option<f64> {
    let ignored: Vec<bool> = gts.iter().map(|g| bin_of(g) != bin).collect();
    let n = ignored.iter().filter(|&&i| !i).count();
    if n == 0 {
        return None;
    }
    let v = greedy_match(dets, gts, &ignored, thr);
    Some(ap_of_hits(&ranked_hits(dets, &v), n))
}

/// Greedy NMS has exactly one self-consistent outcome: a kept set where no
/// member overlaps a higher-ranked member by more than `thr`, and every
/// dropped detection overlaps some higher-ranked member by more than `thr`.
/// Found here by trying every subset. Returns kept indices in rank order.
pub fn nms_exhaustive(dets: &[Detection], thr: f64) -> Vec<usize> {
    assert!(dets.len() <= 12, "exhaustive NMS is exponential");
    let order = rank(dets);
    let pos: Vec<usize> = {
        let mut p = vec![0; dets.len()];
        for (r, &d) in order.iter().enumerate() {
            p[d] = r;
        }
        p
    };
    let mut found = Vec::new();
    for mask in 0u32..(1 << dets.len()) {
        let kept = |i: usize| mask & (1 << i) != 0;
        let covered =
            |i: usize| (0..dets.len()).any(|j| kept(j) && pos[j] < pos[i] && iou(&dets[i].bbox, &dets[j].bbox) > thr);
        if (0..dets.len()).all(|i| kept(i) != covered(i)) {
            found.push(mask);
        }
    }
    assert_eq!(found.len(), 1, "greedy NMS outcome must be unique");
    order.into_iter().filter(|&i| found[0] & (1 << i) != 0).collect()
}

/// A random evaluation instance: up to `max_dets` detections (a mix of
/// jittered ground truths and strays, with frequent score ties) and up to
/// `max_gts` ground truths spanning all size bins.
pub fn instance(rng: &mut Rng, max_dets: usize, max_gts: usize) -> (Vec<Detection>, Vec<BoundingBox>) {
    let rand_box = |rng: &mut Rng| {
        let side = |rng: &mut Rng| [4, 10, 20, 32, 33, 60, 96, 97, 120][rng.below(9) as usize] + rng.below(6) as u32;
        let (w, h) = (side(rng), side(rng));
        let x = rng.below(200) as u32;
        let y = rng.below(200) as u32;
        BoundingBox::new(x, y, x + w, y + h).unwrap()
    };
    let n_gt = rng.below(max_gts as u64 + 1) as usize;
    let gts: Vec<BoundingBox> = (0..n_gt).map(|_| rand_box(rng)).collect();
    let n_det = rng.below(max_dets as u64 + 1) as usize;
    let dets = (0..n_det)
        .map(|_| {
            let bbox = if !gts.is_empty() && rng.bernoulli(0.7) {
                let g = gts[rng.below(gts.len() as u64) as usize];
                let j = |rng: &mut Rng, v: u32| (v as i64 + rng.below(9) as i64 - 4).max(0) as u32;
                let (x0, y0) = (j(rng, g.xmin), j(rng, g.ymin));
                let (x1, y1) = (j(rng, g.xmax).max(x0 + 1), j(rng, g.ymax).max(y0 + 1));
                BoundingBox::new(x0, y0, x1, y1).unwrap()
            } else {
                rand_box(rng)
            };
            let score = rng.below(10) as f64 / 10.0 + if rng.bernoulli(0.5) { 0.05 } else { 0.0 };
            Detection::new(bbox, score).unwrap()
        })
        .collect();
    (dets, gts)
}
