//! Single-frame detection and segmentation: a small strided backbone, a
//! top-down feature pyramid, a shared anchor-free dense head (class, box,
//! centerness), RoI pooling and a spatial-attention mask branch.

mod decode;
mod loss;
mod targets;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{roi_align_forward, RoiBox, Var};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::nn::{Conv2d, ConvSpec, Init, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use decode::{decode_detections, nms, Detection};
pub use loss::{detection_losses, DetectionLosses, MaskSample};
pub use targets::{assign_targets, centerness, DenseTargets, LevelTargets};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerceptionConfig {
    /// Pyramid channel count C.
    pub channels: usize,
    /// Consecutive pyramid level indices; level `l` has stride `2^l`.
    pub levels: Vec<usize>,
    /// Backbone stage widths; stage `l` uses entry `l - 1` (the last entry repeats).
    pub backbone_widths: Vec<usize>,
    pub num_classes: usize,
    /// RoI feature side R.
    pub roi_size: usize,
    /// Mask side M (twice R).
    pub mask_size: usize,
    /// Hidden channels of the mask branch.
    pub mask_channels: usize,
    /// `(lo, hi]` regression ranges per level, in pixels.
    pub scale_ranges: Vec<(f64, f64)>,
    pub score_threshold: f64,
    pub nms_iou: f64,
    pub max_detections: usize,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    /// Bilinear samples per RoI cell side.
    pub roi_sampling: usize,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            levels: vec![3, 4, 5],
            backbone_widths: vec![16, 24, 32, 48, 64],
            num_classes: 4,
            roi_size: 14,
            mask_size: 28,
            mask_channels: 16,
            scale_ranges: default_scale_ranges(3),
            score_threshold: 0.05,
            nms_iou: 0.5,
            max_detections: 20,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            roi_sampling: 2,
        }
    }
}

/// `(0, 64], (64, 128], ...` with an open last range.
pub fn default_scale_ranges(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let lo = if i == 0 { 0.0 } else { 64.0 * (1u64 << (i - 1)) as f64 };
            let hi = if i + 1 == n { f64::INFINITY } else { 64.0 * (1u64 << i) as f64 };
            (lo, hi)
        })
        .collect()
}

impl PerceptionConfig {
    pub fn validate(&self) -> Result<()> {
        let v = Error::validation;
        if self.levels.is_empty() || self.levels[0] == 0 {
            return Err(v("levels", "need at least one level, each >= 1"));
        }
        if self.levels.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(v("levels", "levels must be consecutive and increasing"));
        }
        if self.scale_ranges.len() != self.levels.len() {
            return Err(v("scale_ranges", "one range per level"));
        }
        if self.channels == 0 || self.num_classes == 0 || self.mask_channels == 0 {
            return Err(v("channels", "must be positive"));
        }
        if self.backbone_widths.is_empty() || self.backbone_widths.contains(&0) {
            return Err(v("backbone_widths", "must be non-empty and positive"));
        }
        if self.roi_size < 4 {
            return Err(v("roi_size", "must be at least 4"));
        }
        if self.mask_size != 2 * self.roi_size {
            return Err(v("mask_size", "must equal twice roi_size"));
        }
        for (name, x) in [("score_threshold", self.score_threshold), ("nms_iou", self.nms_iou)] {
            if !(0.0..=1.0).contains(&x) {
                return Err(v(name, "must lie in [0, 1]"));
            }
        }
        if self.roi_sampling == 0 {
            return Err(v("roi_sampling", "must be positive"));
        }
        Ok(())
    }

    pub fn max_stride(&self) -> usize {
        1 << self.levels.last().copied().unwrap_or(0)
    }

    fn stage_width(&self, l: usize) -> usize {
        let w = &self.backbone_widths;
        w[(l - 1).min(w.len() - 1)]
    }
}

/// Shape of one pyramid level.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LevelGeometry {
    pub level: usize,
    pub stride: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

/// Per-level feature maps `[C, H/s, W/s]`.
#[derive(Clone, Debug)]
pub struct PyramidFeatures<T: Scalar> {
    pub levels: Vec<usize>,
    pub maps: Vec<Var<T>>,
}

impl<T: Scalar> PyramidFeatures<T> {
    pub fn stride(&self, i: usize) -> usize {
        1 << self.levels[i]
    }

    pub fn geometry(&self) -> Vec<LevelGeometry> {
        self.levels
            .iter()
            .zip(&self.maps)
            .map(|(&level, m)| {
                let (channels, height, width) = m.value().chw();
                LevelGeometry {
                    level,
                    stride: 1 << level,
                    channels,
                    height,
                    width,
                }
            })
            .collect()
    }

    /// Same values, cut from the autodiff graph.
    pub fn detach(&self) -> Self {
        Self {
            levels: self.levels.clone(),
            maps: self.maps.iter().map(Var::detach).collect(),
        }
    }
}

/// Dense head output of one level.
#[derive(Clone, Debug)]
pub struct LevelOutput<T: Scalar> {
    pub stride: usize,
    /// `[K, h, w]` class logits.
    pub cls: Var<T>,
    /// `[4, h, w]` non-negative (l, t, r, b) distances in pixels.
    pub ltrb: Var<T>,
    /// `[1, h, w]` centerness logits.
    pub ctr: Var<T>,
}

#[derive(Clone, Debug)]
pub struct DenseHeadOutput<T: Scalar> {
    pub levels: Vec<LevelOutput<T>>,
}

/// Geometry `(stride, h, w)` of each level for an `height x width` input.
pub fn pyramid_geometry(cfg: &PerceptionConfig, height: usize, width: usize) -> Vec<(usize, usize, usize)> {
    cfg.levels
        .iter()
        .map(|&l| {
            let s = 1usize << l;
            (s, height / s, width / s)
        })
        .collect()
}

#[derive(Clone, Debug)]
struct SagMask {
    attention: Conv2d,
    reduce: Conv2d,
    fuse: Conv2d,
    logits: Conv2d,
}

#[derive(Clone, Debug)]
pub struct Perception {
    pub config: PerceptionConfig,
    stages: Vec<Conv2d>,
    extras: Vec<Option<Conv2d>>,
    laterals: Vec<Conv2d>,
    smooth: Vec<Conv2d>,
    cls_tower: Conv2d,
    cls_out: Conv2d,
    box_tower: Conv2d,
    box_out: Conv2d,
    ctr_out: Conv2d,
    mask: SagMask,
}

/// Classification prior probability at initialisation.
const CLS_PRIOR: f64 = 0.01;

impl Perception {
    pub fn new<T: Scalar>(ps: &mut ParamStore<T>, config: PerceptionConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let max_level = *config.levels.last().expect("validated");
        let mut stages = Vec::new();
        let mut extras = Vec::new();
        let mut cin = 3;
        for l in 1..=max_level {
            let w = config.stage_width(l);
            stages.push(Conv2d::new(
                ps,
                &format!("perception/backbone/stage{l}/down"),
                ConvSpec::new(cin, w, 3).stride(2),
                rng,
            ));
            extras.push(
                (l >= 3).then(|| Conv2d::new(ps, &format!("perception/backbone/stage{l}/conv"), ConvSpec::new(w, w, 3), rng)),
            );
            cin = w;
        }
        let laterals = config
            .levels
            .iter()
            .map(|&l| {
                let spec = ConvSpec::new(config.stage_width(l), c, 1).init(Init::Fan { gain: 1.0 });
                Conv2d::new(ps, &format!("perception/fpn/lateral{l}"), spec, rng)
            })
            .collect();
        let smooth = config
            .levels
            .iter()
            .map(|&l| {
                let spec = ConvSpec::new(c, c, 3).init(Init::Fan { gain: 1.0 });
                Conv2d::new(ps, &format!("perception/fpn/smooth{l}"), spec, rng)
            })
            .collect();
        let k = config.num_classes;
        let small = Init::Fan { gain: 0.1 };
        let prior = -((1.0 - CLS_PRIOR) / CLS_PRIOR).ln();
        let head = "perception/head";
        let cls_tower = Conv2d::new(ps, &format!("{head}/cls_tower"), ConvSpec::new(c, c, 3), rng);
        let cls_out = Conv2d::new(
            ps,
            &format!("{head}/cls_out"),
            ConvSpec::new(c, k, 3).init(small).bias_init(Init::Constant(prior)),
            rng,
        );
        let box_tower = Conv2d::new(ps, &format!("{head}/box_tower"), ConvSpec::new(c, c, 3), rng);
        let box_out = Conv2d::new(ps, &format!("{head}/box_out"), ConvSpec::new(c, 4, 3).init(small), rng);
        let ctr_out = Conv2d::new(ps, &format!("{head}/ctr_out"), ConvSpec::new(c, 1, 3).init(small), rng);
        let mc = config.mask_channels;
        let mask = SagMask {
            attention: Conv2d::new(
                ps,
                "perception/mask/attention",
                ConvSpec::new(2, 1, 3).init(Init::Fan { gain: 1.0 }),
                rng,
            ),
            reduce: Conv2d::new(ps, "perception/mask/reduce", ConvSpec::new(c, mc, 3), rng),
            fuse: Conv2d::new(ps, "perception/mask/fuse", ConvSpec::new(mc + 3, mc, 3), rng),
            logits: Conv2d::new(
                ps,
                "perception/mask/logits",
                ConvSpec::new(mc, k, 1).init(Init::Fan { gain: 1.0 }),
                rng,
            ),
        };
        Ok(Self {
            config,
            stages,
            extras,
            laterals,
            smooth,
            cls_tower,
            cls_out,
            box_tower,
            box_out,
            ctr_out,
            mask,
        })
    }

    /// Parameter name of the attention conv weight (zeroed in tests).
    pub fn attention_weight_name() -> &'static str {
        "perception/mask/attention/weight"
    }

    /// `image: [3, H, W]` with H and W divisible by the largest stride.
    pub fn extract_pyramid<T: Scalar>(&self, ps: &ParamStore<T>, image: &Var<T>) -> Result<PyramidFeatures<T>> {
        let (c, h, w) = image.value().chw();
        let m = self.config.max_stride();
        if c != 3 {
            return Err(Error::Shape(format!("expected a 3-channel image, got {c} channels")));
        }
        if h % m != 0 || w % m != 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!(
                "input {h}x{w} must be a positive multiple of {m} in both dimensions"
            )));
        }
        let mut x = image.clone();
        let mut feats = Vec::new();
        for (i, (down, extra)) in self.stages.iter().zip(&self.extras).enumerate() {
            x = down.forward(ps, &x).silu();
            if let Some(e) = extra {
                x = e.forward(ps, &x).silu();
            }
            if self.config.levels.contains(&(i + 1)) {
                feats.push(x.clone());
            }
        }
        let n = feats.len();
        let mut maps: Vec<Option<Var<T>>> = vec![None; n];
        let mut top: Option<Var<T>> = None;
        for i in (0..n).rev() {
            let lat = self.laterals[i].forward(ps, &feats[i]);
            let merged = match &top {
                Some(t) => lat.add(&t.upsample2x()),
                None => lat,
            };
            maps[i] = Some(self.smooth[i].forward(ps, &merged));
            top = Some(merged);
        }
        Ok(PyramidFeatures {
            levels: self.config.levels.clone(),
            maps: maps.into_iter().map(|m| m.expect("filled")).collect(),
        })
    }

    pub fn detect<T: Scalar>(&self, ps: &ParamStore<T>, pyramid: &PyramidFeatures<T>) -> DenseHeadOutput<T> {
        let levels = pyramid
            .maps
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let stride = pyramid.stride(i);
                let ct = self.cls_tower.forward(ps, p).silu();
                let bt = self.box_tower.forward(ps, p).silu();
                LevelOutput {
                    stride,
                    cls: self.cls_out.forward(ps, &ct),
                    ltrb: self.box_out.forward(ps, &bt).softplus().scale(T::lit(stride as f64)),
                    ctr: self.ctr_out.forward(ps, &bt),
                }
            })
            .collect();
        DenseHeadOutput { levels }
    }

    /// Per-class mask logits `[K, M, M]` for one RoI.
    ///
    /// `roi: [C, R, R]` is the pooled pyramid feature and `crop: [3, M, M]`
    /// the same box pooled from the input image.
    pub fn mask_logits<T: Scalar>(&self, ps: &ParamStore<T>, roi: &Var<T>, crop: &Var<T>) -> Result<Var<T>> {
        let (r, m) = (self.config.roi_size, self.config.mask_size);
        if roi.shape() != [self.config.channels, r, r] {
            return Err(Error::Shape(format!("RoI feature {:?}, expected [{}, {r}, {r}]", roi.shape(), self.config.channels)));
        }
        if crop.shape() != [3, m, m] {
            return Err(Error::Shape(format!("image crop {:?}, expected [3, {m}, {m}]", crop.shape())));
        }
        let att = self.attention(ps, roi);
        let x = roi.spatial_gate(&att);
        let x = self.mask.reduce.forward(ps, &x).silu().upsample2x();
        let x = Var::concat(&[x, crop.clone()], 0);
        let x = self.mask.fuse.forward(ps, &x).silu();
        Ok(self.mask.logits.forward(ps, &x))
    }

    /// Spatial attention map `[1, R, R]` of the mask branch.
    pub fn attention<T: Scalar>(&self, ps: &ParamStore<T>, roi: &Var<T>) -> Var<T> {
        let pooled = Var::concat(&[roi.channel_max(), roi.channel_mean()], 0);
        self.mask.attention.forward(ps, &pooled).sigmoid()
    }

    /// `[M, M]` mask probabilities for `category_id`.
    pub fn predict_mask<T: Scalar>(
        &self,
        ps: &ParamStore<T>,
        roi: &Var<T>,
        crop: &Var<T>,
        category_id: u32,
    ) -> Result<Var<T>> {
        let k = self.class_index(category_id)?;
        let m = self.config.mask_size;
        Ok(self.mask_logits(ps, roi, crop)?.narrow(0, k, 1).reshape(&[m, m]).sigmoid())
    }

    pub fn class_index(&self, category_id: u32) -> Result<usize> {
        let k = category_id as usize;
        if k == 0 || k > self.config.num_classes {
            return Err(Error::UnknownCategory(category_id));
        }
        Ok(k - 1)
    }

    /// Index of the pyramid level used to pool `bbox`: the level whose scale
    /// range holds half the longer box side.
    pub fn roi_level(&self, bbox: &BBox) -> usize {
        let half = bbox.width().max(bbox.height()) / 2.0;
        self.config
            .scale_ranges
            .iter()
            .position(|&(_, hi)| half <= hi)
            .unwrap_or(self.config.levels.len() - 1)
    }

    /// Pools `bbox` from its assigned pyramid level into `[C, R, R]`.
    pub fn pool_roi<T: Scalar>(&self, pyramid: &PyramidFeatures<T>, bbox: &BBox) -> Result<Var<T>> {
        let i = self.roi_level(bbox);
        roi_align(&pyramid.maps[i], pyramid.stride(i), bbox, self.config.roi_size, self.config.roi_sampling)
    }

    /// `[3, M, M]` crop of the input image inside `bbox`.
    pub fn image_crop<T: Scalar>(&self, image: &Tensor<T>, bbox: &BBox) -> Result<Var<T>> {
        Ok(Var::constant(pixel_roi_align(image, bbox, self.config.mask_size, self.config.roi_sampling)?))
    }
}

/// RoI Align of a feature grid whose cell `(i, j)` sits at input pixel
/// `(j * stride, i * stride)`; `bbox` is in input pixels.
pub fn roi_align<T: Scalar>(feature: &Var<T>, stride: usize, bbox: &BBox, out: usize, sampling: usize) -> Result<Var<T>> {
    let roi = RoiBox {
        x1: bbox.x1 / stride as f64,
        y1: bbox.y1 / stride as f64,
        x2: bbox.x2 / stride as f64,
        y2: bbox.y2 / stride as f64,
    };
    if roi.is_degenerate() {
        return Err(Error::Contract(format!("degenerate RoI box {bbox:?}")));
    }
    Ok(feature.roi_align(roi, out, sampling))
}

/// RoI Align on pixel-resolution data (images, masks), whose samples sit at
/// pixel centres.
pub fn pixel_roi_align<T: Scalar>(data: &Tensor<T>, bbox: &BBox, out: usize, sampling: usize) -> Result<Tensor<T>> {
    let roi = RoiBox {
        x1: bbox.x1 - 0.5,
        y1: bbox.y1 - 0.5,
        x2: bbox.x2 - 0.5,
        y2: bbox.y2 - 0.5,
    };
    if roi.is_degenerate() {
        return Err(Error::Contract(format!("degenerate RoI box {bbox:?}")));
    }
    Ok(roi_align_forward(data, roi, out, sampling))
}
