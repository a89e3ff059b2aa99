//! Online clip inference: per frame fuse, detect, segment, encode, associate.

use std::collections::BTreeMap;

use super::model::Model;
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::mask::BinaryMask;
use crate::metrics::{FrameMask, PredictedTrack};
use crate::nn::ParamStore;
use crate::object_graph::{build_graph, NodeSource, ObjectState};
use crate::perception::{decode_detections, PyramidFeatures};
use crate::scalar::Scalar;
use crate::synthdata::{encode_rle, Dataset, VideoClip};
use crate::tensor::Tensor;
use crate::tracker::{associate, iou_baseline_associate, AssignmentResult, TrackCandidate, TrackStore};

/// One segmented detection of one frame.
#[derive(Clone, Debug)]
pub struct FrameDetection<T: Scalar> {
    pub bbox: BBox,
    pub category_id: u32,
    pub score: f64,
    pub mask: BinaryMask,
    /// `[1, D]` latent state when the graph runs.
    pub z: Option<Tensor<T>>,
}

/// Pastes an `m x m` probability grid covering `bbox` into a full-frame
/// mask: every pixel whose centre lies in the box samples the grid
/// bilinearly (edge-clamped) and is set when the value reaches 0.5.
pub fn paste_mask(prob: &[f64], m: usize, bbox: &BBox, height: usize, width: usize) -> BinaryMask {
    assert_eq!(prob.len(), m * m, "grid size");
    let mut out = BinaryMask::empty(height, width);
    let (bw, bh) = (bbox.width(), bbox.height());
    if bw <= 0.0 || bh <= 0.0 || m == 0 {
        return out;
    }
    let x0 = bbox.x1.floor().max(0.0) as usize;
    let y0 = bbox.y1.floor().max(0.0) as usize;
    let x1 = (bbox.x2.ceil().max(0.0) as usize).min(width);
    let y1 = (bbox.y2.ceil().max(0.0) as usize).min(height);
    let top = (m - 1) as f64;
    for y in y0..y1 {
        let py = y as f64 + 0.5;
        if py < bbox.y1 || py > bbox.y2 {
            continue;
        }
        let v = ((py - bbox.y1) / bh * m as f64 - 0.5).clamp(0.0, top);
        let (v0, fv) = (v.floor() as usize, v - v.floor());
        let v1 = (v0 + 1).min(m - 1);
        for x in x0..x1 {
            let px = x as f64 + 0.5;
            if px < bbox.x1 || px > bbox.x2 {
                continue;
            }
            let u = ((px - bbox.x1) / bw * m as f64 - 0.5).clamp(0.0, top);
            let (u0, fu) = (u.floor() as usize, u - u.floor());
            let u1 = (u0 + 1).min(m - 1);
            let p = (1.0 - fv) * ((1.0 - fu) * prob[v0 * m + u0] + fu * prob[v0 * m + u1])
                + fv * ((1.0 - fu) * prob[v1 * m + u0] + fu * prob[v1 * m + u1]);
            if p >= 0.5 {
                out.set(x, y, true);
            }
        }
    }
    out
}

#[derive(Default)]
struct TrackAcc {
    masks: Vec<FrameMask>,
    confidence_sum: f64,
    votes: BTreeMap<u32, usize>,
}

impl TrackAcc {
    fn finish(self, clip_id: &str, track_id: u32) -> PredictedTrack {
        let n = self.masks.len() as f64;
        // Most votes wins; BTreeMap order plus strict `>` breaks ties low.
        let mut category_id = 0;
        let mut best = 0;
        for (&c, &v) in &self.votes {
            if v > best {
                best = v;
                category_id = c;
            }
        }
        PredictedTrack {
            clip_id: clip_id.to_string(),
            track_id,
            category_id,
            score: self.confidence_sum / n,
            masks: self.masks,
        }
    }
}

/// Per-clip tracking state that survives across frames.
pub struct ClipTracker<T: Scalar> {
    pub store: TrackStore<T>,
    prev_pyramid: Option<PyramidFeatures<T>>,
    frame: usize,
}

impl<T: Scalar> Default for ClipTracker<T> {
    fn default() -> Self {
        Self {
            store: TrackStore::new(),
            prev_pyramid: None,
            frame: 0,
        }
    }
}

impl<T: Scalar> Model<T> {
    /// Detects and segments one frame; `prev` is the raw pyramid of the
    /// previous frame. Returns the detections and this frame's raw pyramid.
    pub fn segment_frame(
        &self,
        ps: &ParamStore<T>,
        image: &Tensor<T>,
        prev: Option<&PyramidFeatures<T>>,
    ) -> Result<(Vec<FrameDetection<T>>, PyramidFeatures<T>)> {
        let (_, h, w) = image.chw();
        let raw = self.pyramid(ps, image)?;
        let fused = self.fuse(ps, prev, &raw)?;
        let dense = self.perception.detect(ps, &fused);
        let p = &self.config.perception;
        let dets = decode_detections(&dense, p.score_threshold, p.nms_iou, p.max_detections);
        let mut out = Vec::with_capacity(dets.len());
        for d in dets {
            let roi = self.perception.pool_roi(&fused, &d.bbox)?;
            let crop = self.perception.image_crop(image, &d.bbox)?;
            let prob = self.perception.predict_mask(ps, &roi, &crop, d.category_id)?;
            let grid: Vec<f64> = prob.value().data().iter().map(|x| x.as_f64()).collect();
            let mask = paste_mask(&grid, p.mask_size, &d.bbox, h, w);
            if mask.is_empty() {
                continue;
            }
            let z = if self.config.gnn_enabled {
                Some(self.graph.encode_object(ps, &roi)?.value().clone())
            } else {
                None
            };
            out.push(FrameDetection {
                bbox: d.bbox,
                category_id: d.category_id,
                score: d.score,
                mask,
                z,
            });
        }
        Ok((out, raw))
    }

    /// Edge probabilities `[stored entry][detection]` from one round of
    /// message passing between the store and the new detections.
    pub fn edge_scores(&self, ps: &ParamStore<T>, store: &TrackStore<T>, dets: &[FrameDetection<T>]) -> Result<Vec<Vec<f64>>> {
        let state = |z: &Option<Tensor<T>>, source, frame| -> Result<ObjectState<T>> {
            let z = z.as_ref().ok_or_else(|| Error::Contract("edge tracking needs latent states".into()))?;
            Ok(ObjectState {
                z: Var::constant(z.clone()),
                source,
                frame,
            })
        };
        let nodes_t = store
            .entries
            .iter()
            .map(|e| state(&e.z, NodeSource::GroundTruth { track_id: e.track_id }, e.last_seen))
            .collect::<Result<Vec<_>>>()?;
        let nodes_t1 = dets
            .iter()
            .enumerate()
            .map(|(i, d)| state(&d.z, NodeSource::Proposal { index: i }, 0))
            .collect::<Result<Vec<_>>>()?;
        let mut g = build_graph(nodes_t, nodes_t1);
        let scores = self.graph.score_edges(ps, &mut g);
        Ok((0..store.len())
            .map(|m| (0..dets.len()).map(|n| scores.get(&g, m, n)).collect())
            .collect())
    }

    /// Runs one frame through the pipeline and the tracker.
    pub fn track_frame(
        &self,
        ps: &ParamStore<T>,
        state: &mut ClipTracker<T>,
        image: &Tensor<T>,
    ) -> Result<(Vec<FrameDetection<T>>, AssignmentResult)> {
        let (dets, raw) = self.segment_frame(ps, image, state.prev_pyramid.as_ref())?;
        let cands: Vec<TrackCandidate<T>> = dets
            .iter()
            .map(|d| TrackCandidate {
                z: d.z.clone(),
                bbox: d.bbox,
                category_id: d.category_id,
                confidence: d.score,
            })
            .collect();
        let tracker = &self.config.tracker;
        let result = if self.uses_edge_tracker() {
            let edges = self.edge_scores(ps, &state.store, &dets)?;
            associate(&cands, &state.store, &edges, tracker)
        } else {
            iou_baseline_associate(&cands, &state.store, tracker.theta_iou)
        };
        state.store.update(&cands, &result, state.frame);
        state.prev_pyramid = Some(raw);
        state.frame += 1;
        Ok((dets, result))
    }

    /// Predicted tracks of one clip, ordered by track id.
    pub fn infer_clip(&self, clip: &VideoClip) -> Result<Vec<PredictedTrack>> {
        let ps = self.params.frozen();
        let mut state = ClipTracker::default();
        let mut tracks: BTreeMap<u32, TrackAcc> = BTreeMap::new();
        let size = clip.size();
        for (t, frame) in clip.frames.iter().enumerate() {
            if (frame.height, frame.width) != size {
                return Err(Error::Shape(format!(
                    "clip {}: frame {t} is {}x{}, earlier frames {}x{}",
                    clip.clip_id, frame.height, frame.width, size.0, size.1
                )));
            }
            let (dets, result) = self.track_frame(&ps, &mut state, &frame.to_tensor())?;
            for (d, a) in dets.iter().zip(&result.assignments) {
                let acc = tracks.entry(a.track_id).or_default();
                acc.masks.push(FrameMask {
                    frame: t,
                    rle: encode_rle(&d.mask),
                });
                acc.confidence_sum += d.score;
                *acc.votes.entry(d.category_id).or_default() += 1;
            }
        }
        Ok(tracks.into_iter().map(|(id, acc)| acc.finish(&clip.clip_id, id)).collect())
    }

    pub fn infer_dataset(&self, dataset: &Dataset) -> Result<Vec<PredictedTrack>> {
        let mut out = Vec::new();
        for clip in &dataset.clips {
            out.extend(self.infer_clip(clip)?);
        }
        Ok(out)
    }
}
