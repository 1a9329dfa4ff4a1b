//! Greedy, class-agnostic non-maximum suppression in world coordinates, used
//! to stitch duplicate predictions from overlapping chips.

use std::cmp::Ordering;

use crate::geodata::{Detection, ScoreKey};
use crate::scalar::Scalar;

pub const DEFAULT_NMS_IOU: f64 = 0.5;

/// Ranking score; a missing or NaN score ranks below everything.
pub(crate) fn rank_score<T: Scalar>(d: &Detection<T>, key: ScoreKey) -> T {
    match d.score(key) {
        Some(s) if !s.is_nan() => s,
        _ => T::neg_infinity(),
    }
}

/// Indices of `dets` in descending rank order. Ties go to the earlier
/// `source_chip` id (detections without one last), then to input order.
pub fn rank_order<T: Scalar>(dets: &[Detection<T>], key: ScoreKey) -> Vec<usize> {
    let scores: Vec<T> = dets.iter().map(|d| rank_score(d, key)).collect();
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then_with(|| match (&dets[a].source_chip, &dets[b].source_chip) {
                (Some(x), Some(y)) => x.cmp(y),
                (Some(_), None) => Ordering::Less,
                (None, Some(_)) => Ordering::Greater,
                (None, None) => Ordering::Equal,
            })
            .then(a.cmp(&b))
    });
    order
}

/// Keeps the highest-ranked remaining detection and drops every remaining
/// one whose IoU with it is at least `iou_threshold`, until none remain.
/// The result is sorted by rank, descending.
pub fn suppress<T: Scalar>(dets: &[Detection<T>], iou_threshold: T, key: ScoreKey) -> Vec<Detection<T>> {
    suppress_indices(dets, iou_threshold, key).into_iter().map(|i| dets[i].clone()).collect()
}

pub fn suppress_indices<T: Scalar>(dets: &[Detection<T>], iou_threshold: T, key: ScoreKey) -> Vec<usize> {
    let order = rank_order(dets, key);
    let mut alive = vec![true; dets.len()];
    let mut kept = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if !alive[i] {
            continue;
        }
        kept.push(i);
        for &j in &order[pos + 1..] {
            if alive[j] && dets[i].bbox.iou(&dets[j].bbox) >= iou_threshold {
                alive[j] = false;
            }
        }
    }
    kept
}
