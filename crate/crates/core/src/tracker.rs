//! Online identity assignment across a clip.
//!
//! Every stored track competes for each new detection through a score that
//! combines the graph's edge probability with category agreement, box overlap
//! and detection confidence. A fixed "new instance" score lets a detection
//! open a track instead. Stored tracks are never dropped, so an object that
//! leaves the frame can be picked up again when it returns.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackerMode {
    /// Learned edge scores plus geometric and category cues.
    Edge,
    /// Box overlap only.
    Iou,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub theta_new: f64,
    pub epsilon: f64,
    /// New-instance threshold of the overlap-only tracker.
    pub theta_iou: f64,
    pub mode: TrackerMode,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 2.0,
            gamma: 1.0,
            theta_new: 0.1,
            epsilon: 1e-6,
            theta_iou: 0.3,
            mode: TrackerMode::Edge,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("tracker.alpha", self.alpha), ("tracker.beta", self.beta), ("tracker.gamma", self.gamma)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::validation(name, "must be finite and >= 0"));
            }
        }
        if !(self.theta_new > 0.0 && self.theta_new.is_finite()) {
            return Err(Error::validation("tracker.theta_new", "must be > 0"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::validation("tracker.epsilon", "must lie in (0, 0.5)"));
        }
        if !(0.0..=1.0).contains(&self.theta_iou) {
            return Err(Error::validation("tracker.theta_iou", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// A detection as the tracker sees it.
#[derive(Clone, Debug)]
pub struct TrackCandidate<T: Scalar> {
    /// Latent state `[1, D]`; unused by the overlap-only tracker.
    pub z: Option<Tensor<T>>,
    pub bbox: BBox,
    pub category_id: u32,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackEntry<T: Scalar> {
    pub track_id: u32,
    pub z: Option<Tensor<T>>,
    pub bbox: BBox,
    pub category_id: u32,
    pub confidence: f64,
    pub last_seen: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackStore<T: Scalar> {
    pub entries: Vec<TrackEntry<T>>,
    pub next_id: u32,
}

impl<T: Scalar> Default for TrackStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AssignmentKind {
    MatchedExisting,
    NewInstance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Assignment {
    pub track_id: u32,
    pub kind: AssignmentKind,
}

/// One assignment per detection, in the detections' input order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AssignmentResult {
    pub assignments: Vec<Assignment>,
}

impl AssignmentResult {
    pub fn track_ids(&self) -> Vec<u32> {
        self.assignments.iter().map(|a| a.track_id).collect()
    }
}

/// Rows are detections; column `m < |store|` is stored entry `m` and the last
/// column is the new-instance option.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    pub rows: Vec<Vec<f64>>,
}

impl<T: Scalar> TrackStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            next_id: 1,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn position(&self, track_id: u32) -> Option<usize> {
        self.entries.iter().position(|e| e.track_id == track_id)
    }

    /// Overwrites matched entries and appends new ones; unmatched entries
    /// keep their previous contents.
    pub fn update(&mut self, detections: &[TrackCandidate<T>], result: &AssignmentResult, frame: usize) {
        assert_eq!(detections.len(), result.assignments.len(), "one assignment per detection");
        for (d, a) in detections.iter().zip(&result.assignments) {
            let entry = TrackEntry {
                track_id: a.track_id,
                z: d.z.clone(),
                bbox: d.bbox,
                category_id: d.category_id,
                confidence: d.confidence,
                last_seen: frame,
            };
            match a.kind {
                AssignmentKind::MatchedExisting => {
                    let i = self.position(a.track_id).expect("matched track is stored");
                    self.entries[i] = entry;
                }
                AssignmentKind::NewInstance => {
                    assert!(self.position(a.track_id).is_none(), "new ids are fresh");
                    self.entries.push(entry);
                    self.next_id = self.next_id.max(a.track_id + 1);
                }
            }
        }
    }
}

/// `edge_scores[m][n]` is the probability that stored entry `m` and detection
/// `n` are the same object.
pub fn score_matrix<T: Scalar>(
    detections: &[TrackCandidate<T>],
    store: &TrackStore<T>,
    edge_scores: &[Vec<f64>],
    cfg: &TrackerConfig,
) -> ScoreMatrix {
    assert_eq!(edge_scores.len(), store.len(), "one edge-score row per stored entry");
    let new_col = cfg.theta_new.ln();
    let rows = detections
        .iter()
        .enumerate()
        .map(|(n, d)| {
            let conf = cfg.gamma * d.confidence.max(f64::MIN_POSITIVE).ln();
            let mut row: Vec<f64> = store
                .entries
                .iter()
                .enumerate()
                .map(|(m, e)| {
                    let edge = edge_scores[m][n].clamp(cfg.epsilon, 1.0 - cfg.epsilon).ln();
                    let cat = if e.category_id == d.category_id { cfg.alpha } else { 0.0 };
                    edge + cat + cfg.beta * d.bbox.iou(&e.bbox) + conf
                })
                .collect();
            row.push(new_col);
            row
        })
        .collect();
    ScoreMatrix { rows }
}

/// Overlap-only scores with `theta_iou` as the new-instance column.
pub fn iou_score_matrix<T: Scalar>(detections: &[TrackCandidate<T>], store: &TrackStore<T>, theta_iou: f64) -> ScoreMatrix {
    let rows = detections
        .iter()
        .map(|d| {
            let mut row: Vec<f64> = store.entries.iter().map(|e| d.bbox.iou(&e.bbox)).collect();
            row.push(theta_iou);
            row
        })
        .collect();
    ScoreMatrix { rows }
}

/// Greedy assignment in descending-confidence order (stable on ties). Each
/// detection takes its best stored entry not yet claimed this frame, or the
/// reusable new-instance column. Equal scores go to the lowest track id,
/// and a stored entry beats the new-instance column on a tie.
pub fn greedy_assign<T: Scalar>(detections: &[TrackCandidate<T>], store: &TrackStore<T>, scores: &ScoreMatrix) -> AssignmentResult {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].confidence.total_cmp(&detections[a].confidence));
    let mut taken = vec![false; store.len()];
    let mut next_id = store.next_id;
    let mut out = vec![
        Assignment {
            track_id: 0,
            kind: AssignmentKind::NewInstance
        };
        detections.len()
    ];
    for n in order {
        let row = &scores.rows[n];
        let mut best: Option<usize> = None;
        for (m, e) in store.entries.iter().enumerate() {
            if taken[m] {
                continue;
            }
            let better = match best {
                None => true,
                Some(b) => row[m] > row[b] || (row[m] == row[b] && e.track_id < store.entries[b].track_id),
            };
            if better {
                best = Some(m);
            }
        }
        out[n] = match best {
            Some(m) if row[m] >= row[store.len()] => {
                taken[m] = true;
                Assignment {
                    track_id: store.entries[m].track_id,
                    kind: AssignmentKind::MatchedExisting,
                }
            }
            _ => {
                next_id += 1;
                Assignment {
                    track_id: next_id - 1,
                    kind: AssignmentKind::NewInstance,
                }
            }
        };
    }
    AssignmentResult { assignments: out }
}

pub fn associate<T: Scalar>(
    detections: &[TrackCandidate<T>],
    store: &TrackStore<T>,
    edge_scores: &[Vec<f64>],
    cfg: &TrackerConfig,
) -> AssignmentResult {
    greedy_assign(detections, store, &score_matrix(detections, store, edge_scores, cfg))
}

pub fn iou_baseline_associate<T: Scalar>(detections: &[TrackCandidate<T>], store: &TrackStore<T>, theta_iou: f64) -> AssignmentResult {
    greedy_assign(detections, store, &iou_score_matrix(detections, store, theta_iou))
}
