//! Video average precision and recall over spatio-temporal IoU, averaged per
//! category and over ten IoU thresholds.

use serde::{Deserialize, Serialize};

use super::{st_iou, ClipEval};
use crate::error::{Error, Result};

/// 0.50, 0.55, ..., 0.95.
pub const IOU_THRESHOLDS: [f64; 10] = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95];

const MAX_DETS: usize = 100;
const RECALL_POINTS: usize = 101;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ApMetrics {
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub ar1: f64,
    pub ar10: f64,
}

/// Precision at 101 evenly spaced recall levels after making precision
/// non-increasing in recall, averaged.
fn interpolated_ap(tp_flags: &[bool], num_gt: usize) -> f64 {
    let mut precision = Vec::with_capacity(tp_flags.len());
    let mut recall = Vec::with_capacity(tp_flags.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &is_tp in tp_flags {
        if is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / num_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let mut sum = 0.0;
    for k in 0..RECALL_POINTS {
        let r = k as f64 / (RECALL_POINTS - 1) as f64;
        let idx = recall.partition_point(|&x| x < r);
        if idx < precision.len() {
            sum += precision[idx];
        }
    }
    sum / RECALL_POINTS as f64
}

/// For each clip, the score-sorted predictions of one category (at most
/// `max_dets`) with their st-IoU against that category's ground truth.
struct CategoryView {
    /// Per clip: (score, ious against gts).
    dets: Vec<Vec<(f64, Vec<f64>)>>,
    num_gt: usize,
}

fn category_view(clips: &[ClipEval], category: u32) -> Result<CategoryView> {
    let mut dets = Vec::with_capacity(clips.len());
    let mut num_gt = 0;
    for clip in clips {
        let gts: Vec<_> = clip.gt.iter().filter(|g| g.category_id == category).collect();
        num_gt += gts.len();
        let mut preds: Vec<_> = clip.preds.iter().filter(|p| p.category_id == category).collect();
        preds.sort_by(|a, b| b.score.total_cmp(&a.score));
        let mut row = Vec::with_capacity(preds.len());
        for p in preds {
            let ious = gts.iter().map(|g| st_iou(&p.masks, &g.masks)).collect::<Result<Vec<_>>>()?;
            row.push((p.score, ious));
        }
        dets.push(row);
    }
    Ok(CategoryView { dets, num_gt })
}

/// Greedy matching at one threshold with at most `max_dets` predictions per
/// clip; returns the true-positive flags in global score order.
fn match_at(view: &CategoryView, threshold: f64, max_dets: usize) -> Vec<bool> {
    let mut scored: Vec<(f64, bool)> = Vec::new();
    for clip in &view.dets {
        let num_gt = clip.first().map_or(0, |(_, ious)| ious.len());
        let mut taken = vec![false; num_gt];
        for (score, ious) in clip.iter().take(max_dets) {
            let mut best: Option<(f64, usize)> = None;
            for (g, &iou) in ious.iter().enumerate() {
                if !taken[g] && iou >= threshold && best.is_none_or(|(b, _)| iou > b) {
                    best = Some((iou, g));
                }
            }
            if let Some((_, g)) = best {
                taken[g] = true;
            }
            scored.push((*score, best.is_some()));
        }
    }
    // Stable, so equal scores keep clip order.
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    scored.into_iter().map(|(_, tp)| tp).collect()
}

/// Category-aware video AP/AR. Categories without ground truth are skipped;
/// predictions naming a category outside `categories` are an error.
pub fn video_ap(clips: &[ClipEval], categories: &[u32]) -> Result<ApMetrics> {
    for clip in clips {
        if let Some(p) = clip.preds.iter().find(|p| !categories.contains(&p.category_id)) {
            return Err(Error::UnknownCategory(p.category_id));
        }
    }
    let mut per_threshold = [0.0; IOU_THRESHOLDS.len()];
    let (mut ar1, mut ar10) = (0.0, 0.0);
    let mut counted = 0usize;
    for &cat in categories {
        let view = category_view(clips, cat)?;
        if view.num_gt == 0 {
            continue;
        }
        counted += 1;
        for (k, &thr) in IOU_THRESHOLDS.iter().enumerate() {
            per_threshold[k] += interpolated_ap(&match_at(&view, thr, MAX_DETS), view.num_gt);
            let recall = |n| match_at(&view, thr, n).iter().filter(|&&t| t).count() as f64 / view.num_gt as f64;
            ar1 += recall(1);
            ar10 += recall(10);
        }
    }
    if counted == 0 {
        return Ok(ApMetrics::default());
    }
    let per_cat = |x: f64| x / counted as f64;
    let n_thr = IOU_THRESHOLDS.len() as f64;
    Ok(ApMetrics {
        ap: per_cat(per_threshold.iter().sum::<f64>() / n_thr),
        ap50: per_cat(per_threshold[0]),
        ap75: per_cat(per_threshold[5]),
        ar1: per_cat(ar1 / n_thr),
        ar10: per_cat(ar10 / n_thr),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_curve_integrates_to_one() {
        assert_eq!(interpolated_ap(&[true, true, true], 3), 1.0);
        assert_eq!(interpolated_ap(&[], 3), 0.0);
    }

    #[test]
    fn hand_curve() {
        // TP, FP, TP over 2 gts: recall 0.5 @ p 1, then 1.0 @ p 2/3.
        // Recall points 0..=0.5 (51 of them) read 1, the other 50 read 2/3.
        let expect = (51.0 + 50.0 * 2.0 / 3.0) / 101.0;
        assert!((interpolated_ap(&[true, false, true], 2) - expect).abs() < 1e-12);
    }

    #[test]
    fn missing_recall_reads_zero() {
        // Only half the objects found: points above 0.5 contribute nothing.
        let expect = 51.0 / 101.0;
        assert!((interpolated_ap(&[true], 2) - expect).abs() < 1e-12);
    }
}
