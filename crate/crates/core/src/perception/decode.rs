use std::cmp::Ordering;

use super::DenseHeadOutput;
use crate::autodiff::ops::sigmoid;
use crate::geometry::BBox;
use crate::scalar::Scalar;

/// Candidates kept per image before non-maximum suppression.
const PRE_NMS_TOP_K: usize = 300;

#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub category_id: u32,
    pub score: f64,
}

/// Boxes and scores from dense head outputs. The image size is implied by
/// the first level (`h * stride`, `w * stride`).
pub fn decode_detections<T: Scalar>(
    dense: &DenseHeadOutput<T>,
    score_threshold: f64,
    nms_iou: f64,
    max_detections: usize,
) -> Vec<Detection> {
    let Some(first) = dense.levels.first() else {
        return Vec::new();
    };
    let (_, h0, w0) = first.cls.value().chw();
    let (img_h, img_w) = ((h0 * first.stride) as f64, (w0 * first.stride) as f64);
    let mut cands = Vec::new();
    for lvl in &dense.levels {
        let (k, h, w) = lvl.cls.value().chw();
        let hw = h * w;
        let cls = lvl.cls.value().data();
        let ltrb = lvl.ltrb.value().data();
        let ctr = lvl.ctr.value().data();
        for p in 0..hw {
            let (x, y) = (((p % w) * lvl.stride) as f64, ((p / w) * lvl.stride) as f64);
            let c = sigmoid(ctr[p].as_f64());
            for class in 0..k {
                let prob = sigmoid(cls[class * hw + p].as_f64());
                if prob <= score_threshold {
                    continue;
                }
                let d = |i: usize| ltrb[i * hw + p].as_f64();
                let bbox = BBox::new(x - d(0), y - d(1), x + d(2), y + d(3)).clip(img_w, img_h);
                if !bbox.is_valid() {
                    continue;
                }
                cands.push(Detection {
                    bbox,
                    category_id: class as u32 + 1,
                    score: (prob * c).sqrt(),
                });
            }
        }
    }
    sort_by_score(&mut cands);
    cands.truncate(PRE_NMS_TOP_K);
    let mut kept = nms(cands, nms_iou);
    kept.truncate(max_detections);
    kept
}

fn sort_by_score(dets: &mut [Detection]) {
    dets.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal));
}

/// Greedy per-category suppression; output sorted by descending score.
pub fn nms(mut dets: Vec<Detection>, iou_threshold: f64) -> Vec<Detection> {
    sort_by_score(&mut dets);
    let mut kept: Vec<Detection> = Vec::new();
    for d in dets {
        let suppressed = kept
            .iter()
            .any(|k| k.category_id == d.category_id && k.bbox.iou(&d.bbox) > iou_threshold);
        if !suppressed {
            kept.push(d);
        }
    }
    kept
}
