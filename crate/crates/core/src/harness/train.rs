//! Two-frame training loop with SGD and momentum.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{save_checkpoint, CheckpointMeta};
use super::config::Config;
use super::model::Model;
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::nn::ParamStore;
use crate::object_graph::{association_loss, association_targets, build_graph, positive_pairs, transition_consistency_loss};
use crate::object_graph::{NodeSource, ObjectState};
use crate::perception::{assign_targets, decode_detections, detection_losses, pixel_roi_align, pyramid_geometry, MaskSample};
use crate::scalar::Scalar;
use crate::synthdata::{augment_pair, read_dataset, AugmentParams, Dataset, GroundTruth, GtInstance, TrackInfo, VideoClip};
use crate::tensor::Tensor;

/// Loss components of one iteration, averaged over the batch. `edge` and
/// `trans` are `None` when the graph is disabled.
#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub lr: f64,
    pub total: f64,
    pub cls: f64,
    pub box_iou: f64,
    pub ctr: f64,
    pub mask: f64,
    pub edge: Option<f64>,
    pub trans: Option<f64>,
}

impl LossRecord {
    pub fn csv_header(gnn: bool) -> &'static str {
        if gnn {
            "iteration,lr,total,cls,box,ctr,mask,edge,trans"
        } else {
            "iteration,lr,total,cls,box,ctr,mask"
        }
    }

    pub fn csv_row(&self) -> String {
        let mut s = format!(
            "{},{},{},{},{},{},{}",
            self.iteration, self.lr, self.total, self.cls, self.box_iou, self.ctr, self.mask
        );
        if let (Some(e), Some(t)) = (self.edge, self.trans) {
            let _ = write!(s, ",{e},{t}");
        }
        s
    }

    pub fn breakdown(&self) -> String {
        let mut s = format!("cls={} box={} ctr={} mask={}", self.cls, self.box_iou, self.ctr, self.mask);
        if let (Some(e), Some(t)) = (self.edge, self.trans) {
            let _ = write!(s, " edge={e} trans={t}");
        }
        s
    }
}

pub fn loss_csv(records: &[LossRecord], gnn: bool) -> String {
    let mut out = String::from(LossRecord::csv_header(gnn));
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Differentiable loss terms of one frame pair.
pub struct PairLosses<T: Scalar> {
    pub cls: Var<T>,
    pub box_iou: Var<T>,
    pub ctr: Var<T>,
    pub mask: Var<T>,
    pub edge: Option<Var<T>>,
    pub trans: Option<Var<T>>,
}

impl<T: Scalar> PairLosses<T> {
    /// `(weight, term)` for every present term.
    fn weighted(&self, cfg: &Config) -> Vec<(f64, &Var<T>)> {
        let w = &cfg.loss;
        let mut out = vec![(w.cls, &self.cls), (w.box_iou, &self.box_iou), (w.ctr, &self.ctr), (w.mask, &self.mask)];
        if let (Some(e), Some(t)) = (&self.edge, &self.trans) {
            out.push((w.edge, e));
            out.push((w.trans, t));
        }
        out
    }

    /// Differentiable weighted sum.
    pub fn total(&self, cfg: &Config) -> Var<T> {
        let terms: Vec<Var<T>> = self.weighted(cfg).into_iter().map(|(w, v)| v.scale(T::lit(w))).collect();
        Var::add_all(&terms)
    }
}

fn zero<T: Scalar>() -> Var<T> {
    Var::constant(Tensor::scalar(T::zero()))
}

/// Frames `t` and `t + 1` of a clip as a two-frame clip.
pub fn consecutive_pair(clip: &VideoClip, gt: &GroundTruth, t: usize) -> (VideoClip, GroundTruth) {
    let pair_clip = VideoClip {
        clip_id: clip.clip_id.clone(),
        frames: clip.frames[t..t + 2].to_vec(),
    };
    let pair_gt = GroundTruth {
        masks: gt.masks[t..t + 2].to_vec(),
        objects: gt
            .objects
            .iter()
            .map(|o| TrackInfo {
                track_id: o.track_id,
                category_id: o.category_id,
                present: o.present[t..t + 2].to_vec(),
            })
            .collect(),
    };
    (pair_clip, pair_gt)
}

/// Randomly shifts every side by up to 10% of the box size, keeping the box
/// inside the image and at least one pixel wide.
fn jitter(b: &BBox, rng: &mut ChaCha8Rng, w: f64, h: f64) -> BBox {
    let (bw, bh) = (b.width(), b.height());
    let mut d = || rng.gen_range(-0.1..0.1);
    let (dx1, dy1, dx2, dy2) = (d(), d(), d(), d());
    let j = BBox::new(b.x1 + dx1 * bw, b.y1 + dy1 * bh, b.x2 + dx2 * bw, b.y2 + dy2 * bh).clip(w, h);
    if j.width() >= 1.0 && j.height() >= 1.0 {
        j
    } else {
        *b
    }
}

impl<T: Scalar> Model<T> {
    /// Loss terms of one frame pair. `ps` carries gradients; `frozen` holds
    /// the same weights as constants and runs the previous frame.
    pub fn pair_losses(
        &self,
        ps: &ParamStore<T>,
        frozen: &ParamStore<T>,
        clip: &VideoClip,
        gt: &GroundTruth,
        rng: &mut ChaCha8Rng,
    ) -> Result<PairLosses<T>> {
        let cfg = &self.config;
        let p = &cfg.perception;
        let (img0, img1) = (clip.frames[0].to_tensor::<T>(), clip.frames[1].to_tensor::<T>());
        let (_, h, w) = img1.chw();
        let raw0 = self.pyramid(frozen, &img0)?;
        let raw1 = self.pyramid(ps, &img1)?;
        let fused1 = self.fuse(ps, Some(&raw0), &raw1)?;
        let dense = self.perception.detect(ps, &fused1);
        let gt1 = gt.instances(1);
        let targets = assign_targets(&gt1, &pyramid_geometry(p, h, w), &p.scale_ranges);

        let mut masks = Vec::new();
        for g in &gt1 {
            let k = self.perception.class_index(g.category_id)?;
            let bits = gt.binary_mask(1, g.track_id);
            let full = Tensor::<f64>::new(&[1, h, w], bits.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect());
            for bbox in [g.bbox, jitter(&g.bbox, rng, w as f64, h as f64)] {
                let roi = self.perception.pool_roi(&fused1, &bbox)?;
                let crop = self.perception.image_crop(&img1, &bbox)?;
                let logits = self.perception.mask_logits(ps, &roi, &crop)?.narrow(0, k, 1);
                let target = pixel_roi_align(&full, &bbox, p.mask_size, p.roi_sampling)?.into_data();
                masks.push(MaskSample { logits, target });
            }
        }
        let det = detection_losses(&dense, &targets, &masks, p.focal_alpha, p.focal_gamma);

        let (edge, trans) = if cfg.gnn_enabled {
            let (e, t) = self.graph_losses(ps, frozen, &raw0, &fused1, &dense_boxes(self, &dense), gt, rng, (w, h))?;
            (Some(e), Some(t))
        } else {
            (None, None)
        };
        Ok(PairLosses {
            cls: det.cls,
            box_iou: det.box_loss,
            ctr: det.ctr,
            mask: det.mask,
            edge,
            trans,
        })
    }

    /// Association BCE and transition consistency. Frame-t nodes are the
    /// true objects of frame t; frame-t+1 nodes are the top proposals plus
    /// the true boxes. Pyramid features enter as constants, so these terms
    /// train only the graph.
    #[allow(clippy::too_many_arguments)]
    fn graph_losses(
        &self,
        ps: &ParamStore<T>,
        frozen: &ParamStore<T>,
        raw0: &crate::perception::PyramidFeatures<T>,
        fused1: &crate::perception::PyramidFeatures<T>,
        proposals: &[BBox],
        gt: &GroundTruth,
        rng: &mut ChaCha8Rng,
        (w, h): (usize, usize),
    ) -> Result<(Var<T>, Var<T>)> {
        let gt0: Vec<GtInstance> = gt.instances(0);
        let gt1 = gt.instances(1);
        let fused0 = self.fuse(frozen, None, raw0)?;
        let fused1 = fused1.detach();
        let mut nodes_t = Vec::with_capacity(gt0.len());
        for g in &gt0 {
            let bbox = jitter(&g.bbox, rng, w as f64, h as f64);
            let roi = self.perception.pool_roi(&fused0, &bbox)?;
            nodes_t.push(ObjectState {
                z: self.graph.encode_object(ps, &roi)?,
                source: NodeSource::GroundTruth { track_id: g.track_id },
                frame: 0,
            });
        }
        let mut boxes: Vec<BBox> = proposals.iter().take(self.config.train.max_proposals).copied().collect();
        boxes.extend(gt1.iter().map(|g| g.bbox));
        let mut nodes_t1 = Vec::with_capacity(boxes.len());
        for (i, b) in boxes.iter().enumerate() {
            let roi = self.perception.pool_roi(&fused1, b)?;
            nodes_t1.push(ObjectState {
                z: self.graph.encode_object(ps, &roi)?,
                source: NodeSource::Proposal { index: i },
                frame: 1,
            });
        }
        let tracks: Vec<u32> = gt0.iter().map(|g| g.track_id).collect();
        let labels = association_targets(&tracks, &boxes, &gt1, self.config.train.assoc_iou);
        let mut g = build_graph(nodes_t, nodes_t1);
        let scores = self.graph.score_edges(ps, &mut g);
        let edge = association_loss(&scores.logits, &labels);
        let trans = match positive_pairs(&g, &labels) {
            Some((pred, enc)) => transition_consistency_loss(&pred, &enc.detach()),
            None => zero(),
        };
        Ok((edge, trans))
    }
}

fn dense_boxes<T: Scalar>(model: &Model<T>, dense: &crate::perception::DenseHeadOutput<T>) -> Vec<BBox> {
    let p = &model.config.perception;
    decode_detections(dense, p.score_threshold, p.nms_iou, model.config.train.max_proposals)
        .into_iter()
        .map(|d| d.bbox)
        .collect()
}

/// Draws one training pair: a consecutive frame pair, or with probability
/// `p_img` (always for one-frame clips) an augmented still-image pair.
pub fn sample_pair(dataset: &Dataset, p_img: f64, rng: &mut ChaCha8Rng) -> Result<(VideoClip, GroundTruth)> {
    let c = rng.gen_range(0..dataset.clips.len());
    let (clip, gt) = (&dataset.clips[c], &dataset.ground_truths[c]);
    let n = clip.len();
    let still = rng.gen_bool(p_img);
    if still || n < 2 {
        let f = rng.gen_range(0..n);
        let seed = rng.gen();
        augment_pair(&clip.frames[f], &gt.frame(f), &AugmentParams::default(), seed)
    } else {
        Ok(consecutive_pair(clip, gt, rng.gen_range(0..n - 1)))
    }
}

/// Result of [`train`].
pub struct Trained<T: Scalar> {
    pub model: Model<T>,
    pub meta: CheckpointMeta,
    pub curve: Vec<LossRecord>,
}

/// Global L2 norm rescaling to at most `max_norm` (0 disables).
fn clip_gradients<T: Scalar>(grads: &mut [Tensor<T>], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|x| x.as_f64() * x.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = T::lit(max_norm / norm);
        for g in grads {
            g.scale_assign(s);
        }
    }
}

/// Trains a fresh model on `dataset`. `progress` sees every record as it is
/// produced.
pub fn train<T: Scalar>(config: Config, dataset: &Dataset, mut progress: impl FnMut(&LossRecord)) -> Result<Trained<T>> {
    if dataset.is_empty() {
        return Err(Error::NoClips);
    }
    let mut model = Model::<T>::new(config)?;
    let cfg = model.config.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(10);
    let ids: Vec<_> = model.params.iter().map(|(id, _, _)| id).collect();
    let mut velocity: Vec<Tensor<T>> = model.params.iter().map(|(_, _, v)| Tensor::zeros(v.shape())).collect();
    let mut curve = Vec::with_capacity(cfg.optim.iterations);
    let b = cfg.optim.batch_size;
    for it in 0..cfg.optim.iterations {
        let frozen = model.params.frozen();
        let mut terms = Vec::new();
        let mut sums = [0.0f64; 6];
        for _ in 0..b {
            let (clip, gt) = sample_pair(dataset, cfg.train.p_img, &mut rng)?;
            let l = model.pair_losses(&model.params, &frozen, &clip, &gt, &mut rng)?;
            let parts = [Some(&l.cls), Some(&l.box_iou), Some(&l.ctr), Some(&l.mask), l.edge.as_ref(), l.trans.as_ref()];
            for (s, v) in sums.iter_mut().zip(parts) {
                if let Some(v) = v {
                    *s += v.item().as_f64() / b as f64;
                }
            }
            terms.push(l.total(&cfg).scale(T::lit(1.0 / b as f64)));
        }
        let lr = cfg.optim.lr_at(it);
        let w = &cfg.loss;
        let gnn = cfg.gnn_enabled;
        let mut total = w.cls * sums[0] + w.box_iou * sums[1] + w.ctr * sums[2] + w.mask * sums[3];
        if gnn {
            total += w.edge * sums[4] + w.trans * sums[5];
        }
        let record = LossRecord {
            iteration: it,
            lr,
            total,
            cls: sums[0],
            box_iou: sums[1],
            ctr: sums[2],
            mask: sums[3],
            edge: gnn.then_some(sums[4]),
            trans: gnn.then_some(sums[5]),
        };
        if !record.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: it,
                breakdown: record.breakdown(),
            });
        }
        let grads = Var::add_all(&terms).backward();
        let mut g: Vec<Tensor<T>> = ids.iter().map(|&id| grads.get_or_zeros(model.params.var(id))).collect();
        clip_gradients(&mut g, cfg.optim.grad_clip);
        let (mu, step) = (T::lit(cfg.optim.momentum), T::lit(lr));
        for ((&id, v), g) in ids.iter().zip(&mut velocity).zip(&g) {
            *v = v.zip_map(g, |v, g| mu * v + g);
            let updated = model.params.var(id).value().zip_map(v, |w, v| w - step * v);
            model.params.set(id, updated);
        }
        progress(&record);
        curve.push(record);
    }
    let meta = CheckpointMeta {
        iteration: cfg.optim.iterations as u64,
        seed: cfg.seed,
        rng_word_pos: rng.get_word_pos(),
    };
    Ok(Trained { model, meta, curve })
}

/// Where the loss curve of a run saving to `ckpt` goes.
pub fn loss_csv_path(config: &Config, ckpt: &Path) -> PathBuf {
    if config.train.loss_csv.is_empty() {
        let mut p = ckpt.as_os_str().to_owned();
        p.push(".loss.csv");
        PathBuf::from(p)
    } else {
        PathBuf::from(&config.train.loss_csv)
    }
}

/// Reads `data.train`, trains, writes the checkpoint and its loss curve.
pub fn train_to_file<T: Scalar>(config: Config, ckpt: &Path, progress: impl FnMut(&LossRecord)) -> Result<Trained<T>> {
    if config.train_data.is_empty() {
        return Err(Error::validation("data.train", "no training dataset given"));
    }
    let dataset = read_dataset(Path::new(&config.train_data))?;
    let trained = train::<T>(config, &dataset, progress)?;
    save_checkpoint(&trained.model, &trained.meta, ckpt)?;
    let csv_path = loss_csv_path(&trained.model.config, ckpt);
    std::fs::write(&csv_path, loss_csv(&trained.curve, trained.model.config.gnn_enabled))
        .map_err(|e| Error::io(&csv_path, e))?;
    Ok(trained)
}
