//! Track-level evaluation: spatio-temporal IoU, category-aware video AP/AR
//! and the region/boundary (J&F) protocol for category-agnostic tracking.

mod davis;
mod video_ap;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use davis::{
    boundary, boundary_f, davis_metrics, decay, frame_iou, max_weight_assignment, JfMetrics,
};
pub use video_ap::{video_ap, ApMetrics, IOU_THRESHOLDS};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::synthdata::{decode_rle, Dataset, GroundTruth, RleMask};

/// One frame of a predicted track in the results file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameMask {
    pub frame: usize,
    pub rle: RleMask,
}

/// One predicted track as stored in the results file; frames without an
/// entry have an empty mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictedTrack {
    pub clip_id: String,
    pub track_id: u32,
    pub category_id: u32,
    pub score: f64,
    pub masks: Vec<FrameMask>,
}

/// A track with one full-size mask per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTrack {
    pub track_id: u32,
    pub category_id: u32,
    pub score: f64,
    pub masks: Vec<BinaryMask>,
}

/// Everything needed to score one clip.
#[derive(Clone, Debug, Default)]
pub struct ClipEval {
    pub gt: Vec<DenseTrack>,
    pub preds: Vec<DenseTrack>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// Category-aware.
    Vis,
    /// Category-agnostic.
    Uvos,
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vis" => Ok(Protocol::Vis),
            "uvos" => Ok(Protocol::Uvos),
            other => Err(Error::validation("protocol", format!("`{other}` is not one of vis, uvos"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(rename = "AP")]
    pub ap: f64,
    #[serde(rename = "AP50")]
    pub ap50: f64,
    #[serde(rename = "AP75")]
    pub ap75: f64,
    #[serde(rename = "AR1")]
    pub ar1: f64,
    #[serde(rename = "AR10")]
    pub ar10: f64,
    #[serde(rename = "J_mean")]
    pub j_mean: f64,
    #[serde(rename = "J_recall")]
    pub j_recall: f64,
    #[serde(rename = "J_decay")]
    pub j_decay: f64,
    #[serde(rename = "F_mean")]
    pub f_mean: f64,
    #[serde(rename = "F_recall")]
    pub f_recall: f64,
    #[serde(rename = "F_decay")]
    pub f_decay: f64,
    #[serde(rename = "JF_mean")]
    pub jf_mean: f64,
}

impl EvalReport {
    pub fn from_parts(ap: &ApMetrics, jf: &JfMetrics) -> Self {
        Self {
            ap: ap.ap,
            ap50: ap.ap50,
            ap75: ap.ap75,
            ar1: ap.ar1,
            ar10: ap.ar10,
            j_mean: jf.j_mean,
            j_recall: jf.j_recall,
            j_decay: jf.j_decay,
            f_mean: jf.f_mean,
            f_recall: jf.f_recall,
            f_decay: jf.f_decay,
            jf_mean: jf.jf_mean,
        }
    }
}

impl PredictedTrack {
    /// Expands to one mask per frame of a `num_frames` x `height` x `width` clip.
    pub fn densify(&self, num_frames: usize, height: usize, width: usize) -> Result<DenseTrack> {
        let mut masks = vec![BinaryMask::empty(height, width); num_frames];
        let mut seen = vec![false; num_frames];
        for fm in &self.masks {
            let ctx = || format!("clip {} track {} frame {}", self.clip_id, self.track_id, fm.frame);
            if fm.frame >= num_frames {
                return Err(Error::Format(format!("{}: clip has {num_frames} frames", ctx())));
            }
            if seen[fm.frame] {
                return Err(Error::Format(format!("{}: duplicate frame", ctx())));
            }
            if fm.rle.size != (height, width) {
                return Err(Error::Format(format!("{}: mask size {:?}, clip is {height}x{width}", ctx(), fm.rle.size)));
            }
            seen[fm.frame] = true;
            masks[fm.frame] = decode_rle(&fm.rle)?;
        }
        Ok(DenseTrack {
            track_id: self.track_id,
            category_id: self.category_id,
            score: self.score,
            masks,
        })
    }
}

/// Ground-truth tracks of a clip, in annotation order.
pub fn gt_tracks(gt: &GroundTruth) -> Vec<DenseTrack> {
    gt.objects
        .iter()
        .map(|o| DenseTrack {
            track_id: o.track_id,
            category_id: o.category_id,
            score: 1.0,
            masks: (0..gt.masks.len()).map(|t| gt.binary_mask(t, o.track_id)).collect(),
        })
        .collect()
}

/// Summed intersection over summed union across frames; 0 if both tracks are
/// empty everywhere.
pub fn st_iou(a: &[BinaryMask], b: &[BinaryMask]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!("tracks span {} and {} frames", a.len(), b.len())));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.iter().zip(b) {
        if (x.height, x.width) != (y.height, y.width) {
            return Err(Error::Contract(format!(
                "mask sizes {}x{} and {}x{}",
                x.height, x.width, y.height, y.width
            )));
        }
        for (&p, &q) in x.data.iter().zip(&y.data) {
            inter += (p && q) as usize;
            union += (p || q) as usize;
        }
    }
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

/// [`st_iou`] between a stored prediction and a ground-truth track of `clip_id`.
pub fn track_st_iou(pred: &PredictedTrack, clip_id: &str, gt: &DenseTrack) -> Result<f64> {
    if pred.clip_id != clip_id {
        return Err(Error::Contract(format!("prediction for clip {} scored against clip {clip_id}", pred.clip_id)));
    }
    let (h, w) = gt.masks.first().map_or((0, 0), |m| (m.height, m.width));
    st_iou(&pred.densify(gt.masks.len(), h, w)?.masks, &gt.masks)
}

/// Pairs each clip of `dataset` with its predictions. Predictions for clips
/// the dataset lacks are an error naming every such clip.
pub fn collect_clips(preds: &[PredictedTrack], dataset: &Dataset) -> Result<Vec<ClipEval>> {
    if dataset.is_empty() {
        return Err(Error::NoClips);
    }
    let mut by_clip: BTreeMap<&str, Vec<&PredictedTrack>> = BTreeMap::new();
    for p in preds {
        by_clip.entry(p.clip_id.as_str()).or_default().push(p);
    }
    let missing: Vec<String> = by_clip
        .keys()
        .filter(|id| dataset.find(id).is_none())
        .map(|s| s.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingClips(missing));
    }
    dataset
        .clips
        .iter()
        .zip(&dataset.ground_truths)
        .map(|(clip, gt)| {
            let (h, w) = clip.size();
            let preds = by_clip
                .get(clip.clip_id.as_str())
                .map(|ps| ps.iter().map(|p| p.densify(clip.len(), h, w)).collect::<Result<Vec<_>>>())
                .transpose()?
                .unwrap_or_default();
            Ok(ClipEval { gt: gt_tracks(gt), preds })
        })
        .collect()
}

/// Both metric families. Under [`Protocol::Uvos`] categories are ignored,
/// which makes the AP section class-agnostic.
pub fn evaluate(preds: &[PredictedTrack], dataset: &Dataset, protocol: Protocol) -> Result<EvalReport> {
    let mut clips = collect_clips(preds, dataset)?;
    let categories = match protocol {
        Protocol::Vis => dataset.category_ids(),
        Protocol::Uvos => {
            for c in &mut clips {
                for t in c.gt.iter_mut().chain(c.preds.iter_mut()) {
                    t.category_id = 0;
                }
            }
            vec![0]
        }
    };
    let ap = video_ap(&clips, &categories)?;
    let jf = davis_metrics(&clips);
    Ok(EvalReport::from_parts(&ap, &jf))
}

pub fn evaluate_vis(preds: &[PredictedTrack], dataset: &Dataset) -> Result<EvalReport> {
    evaluate(preds, dataset, Protocol::Vis)
}

pub fn evaluate_uvos(preds: &[PredictedTrack], dataset: &Dataset) -> Result<EvalReport> {
    evaluate(preds, dataset, Protocol::Uvos)
}

/// Identity switches of one clip: for each ground-truth track, the number of
/// times the best-overlapping prediction (frame IoU >= 0.5) changes between
/// consecutive frames where one exists.
pub fn id_switches(clip: &ClipEval) -> usize {
    let mut switches = 0;
    for g in &clip.gt {
        let mut last: Option<u32> = None;
        for (t, gm) in g.masks.iter().enumerate() {
            if gm.is_empty() {
                continue;
            }
            let mut best: Option<(f64, u32)> = None;
            for p in &clip.preds {
                let iou = frame_iou(&p.masks[t], gm);
                if iou >= 0.5 && best.is_none_or(|(b, _)| iou > b) {
                    best = Some((iou, p.track_id));
                }
            }
            if let Some((_, id)) = best {
                if last.is_some_and(|l| l != id) {
                    switches += 1;
                }
                last = Some(id);
            }
        }
    }
    switches
}
