//! Detection scoring: greedy IoU matching, precision/recall curves, AP50 with
//! all-point interpolation, maximum recall under a false-detect budget, and
//! the two-threshold quadrant sweep over (detector, classifier) scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodata::{Detection, GeoBox, ScoreKey};
use crate::nms::rank_score;
use crate::scalar::Scalar;

pub const DEFAULT_MATCH_IOU: f64 = 0.5;
pub const DEFAULT_FP_PER_TP: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    TruePositive,
    FalsePositive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct MatchRecord<T> {
    /// Index into the prediction list given to [`match_detections`].
    pub detection: usize,
    pub outcome: Outcome,
    pub matched_gt: Option<usize>,
    pub iou: T,
    pub rank_score: T,
}

impl<T> MatchRecord<T> {
    pub fn is_tp(&self) -> bool {
        self.outcome == Outcome::TruePositive
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult<T> {
    /// Records in rank order (descending score).
    pub records: Vec<MatchRecord<T>>,
    pub n_gt: usize,
    pub unmatched_gt: usize,
}

/// Greedy matching: predictions in descending `key` order (ties by input
/// order) each claim the unclaimed ground truth of highest IoU at or above
/// `iou_threshold` (ties to the lower GT index), otherwise they are false
/// positives. A second prediction on an already claimed box is a false
/// positive.
pub fn match_detections<T: Scalar>(
    preds: &[Detection<T>],
    gts: &[GeoBox<T>],
    iou_threshold: T,
    key: ScoreKey,
) -> MatchResult<T> {
    let scores: Vec<T> = preds.iter().map(|d| rank_score(d, key)).collect();
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal));

    let mut claimed = vec![false; gts.len()];
    let mut records = Vec::with_capacity(preds.len());
    for i in order {
        let mut best: Option<(usize, T)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if claimed[g] {
                continue;
            }
            let v = preds[i].bbox.iou(gt);
            if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        let record = match best {
            Some((g, v)) => {
                claimed[g] = true;
                MatchRecord { detection: i, outcome: Outcome::TruePositive, matched_gt: Some(g), iou: v, rank_score: scores[i] }
            }
            None => MatchRecord { detection: i, outcome: Outcome::FalsePositive, matched_gt: None, iou: T::zero(), rank_score: scores[i] },
        };
        records.push(record);
    }
    let unmatched_gt = claimed.iter().filter(|c| !**c).count();
    MatchResult { records, n_gt: gts.len(), unmatched_gt }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct PrPoint<T> {
    pub threshold: T,
    pub precision: T,
    pub recall: T,
    pub tp: usize,
    pub fp: usize,
}

fn sorted_by_score<T: Scalar>(records: &[MatchRecord<T>]) -> Vec<&MatchRecord<T>> {
    let mut sorted: Vec<&MatchRecord<T>> = records.iter().collect();
    sorted.sort_by(|a, b| b.rank_score.partial_cmp(&a.rank_score).unwrap_or(std::cmp::Ordering::Equal));
    sorted
}

/// One point per distinct score threshold, descending. Each point counts the
/// records scoring at or above its threshold.
pub fn pr_curve<T: Scalar>(records: &[MatchRecord<T>], n_gt: usize) -> Result<Vec<PrPoint<T>>> {
    if n_gt == 0 {
        return Err(Error::EmptyGroundTruth);
    }
    let sorted = sorted_by_score(records);
    let n = T::from_count(n_gt);
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    for (k, r) in sorted.iter().enumerate() {
        if r.is_tp() {
            tp += 1;
        } else {
            fp += 1;
        }
        let group_ends = sorted.get(k + 1).is_none_or(|next| next.rank_score != r.rank_score);
        if group_ends {
            points.push(PrPoint {
                threshold: r.rank_score,
                precision: T::from_count(tp) / T::from_count(tp + fp),
                recall: T::from_count(tp) / n,
                tp,
                fp,
            });
        }
    }
    Ok(points)
}

/// Area under the all-point interpolated PR curve: the precision at recall
/// `r` is replaced by the best precision at any recall `>= r`.
pub fn ap50<T: Scalar>(records: &[MatchRecord<T>], n_gt: usize) -> Result<T> {
    let points = pr_curve(records, n_gt)?;
    let mut envelope = T::zero();
    let mut interpolated = vec![T::zero(); points.len()];
    for (k, p) in points.iter().enumerate().rev() {
        envelope = envelope.max(p.precision);
        interpolated[k] = envelope;
    }
    let mut ap = T::zero();
    let mut prev_recall = T::zero();
    for (p, prec) in points.iter().zip(interpolated) {
        if p.recall > prev_recall {
            ap = ap + (p.recall - prev_recall) * prec;
            prev_recall = p.recall;
        }
    }
    Ok(ap)
}

/// Highest recall over thresholds whose precision is at least
/// `1 / (1 + fp_per_tp)`, i.e. at most `fp_per_tp` false detects per true
/// detect. Zero when no threshold qualifies.
pub fn max_recall_at_imprecision<T: Scalar>(records: &[MatchRecord<T>], n_gt: usize, fp_per_tp: T) -> Result<T> {
    let points = pr_curve(records, n_gt)?;
    // compared on counts so the bound is exact
    Ok(points
        .iter()
        .filter(|p| p.tp > 0 && T::from_count(p.fp) <= fp_per_tp * T::from_count(p.tp))
        .map(|p| p.recall)
        .fold(T::zero(), T::max))
}

/// Precision/recall of every upper-right quadrant `s_d > t_d && s_c > t_c`,
/// with thresholds drawn from the observed scores plus negative infinity.
/// Matching is done once, ranked by detector score. Empty quadrants produce
/// no point. Points are `(precision, recall)`, deduplicated and sorted by
/// recall then precision.
pub fn quadrant_sweep<T: Scalar>(
    dets: &[Detection<T>],
    gts: &[GeoBox<T>],
    iou_threshold: T,
) -> Result<Vec<(T, T)>> {
    if gts.is_empty() {
        return Err(Error::EmptyGroundTruth);
    }
    let s_c: Vec<T> = dets
        .iter()
        .enumerate()
        .map(|(i, d)| d.s_c.ok_or(Error::MissingClassifierScore(i)))
        .collect::<Result<_>>()?;
    let matched = match_detections(dets, gts, iou_threshold, ScoreKey::Detector);
    let mut is_tp = vec![false; dets.len()];
    for r in &matched.records {
        is_tp[r.detection] = r.is_tp();
    }

    let thresholds = |vals: Vec<T>| {
        let mut t = vals;
        t.push(T::neg_infinity());
        t.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        t.dedup();
        t
    };
    let td = thresholds(dets.iter().map(|d| d.s_d).collect());
    let tc = thresholds(s_c.clone());

    // sort by s_c so each detector threshold is one pass over s_c thresholds
    let mut by_c: Vec<usize> = (0..dets.len()).collect();
    by_c.sort_by(|&a, &b| s_c[b].partial_cmp(&s_c[a]).unwrap_or(std::cmp::Ordering::Equal));
    let n = T::from_count(gts.len());
    let mut points: Vec<(T, T)> = Vec::new();
    for &t_d in &td {
        let mut pos = 0;
        let (mut tp, mut fp) = (0usize, 0usize);
        for &t_c in tc.iter().rev() {
            while pos < by_c.len() && s_c[by_c[pos]] > t_c {
                let i = by_c[pos];
                if dets[i].s_d > t_d {
                    if is_tp[i] {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
                pos += 1;
            }
            if tp + fp > 0 {
                points.push((T::from_count(tp) / T::from_count(tp + fp), T::from_count(tp) / n));
            }
        }
    }
    points.sort_by(|a, b| {
        a.1.partial_cmp(&b.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal))
    });
    points.dedup();
    Ok(points)
}
