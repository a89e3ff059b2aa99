//! Deterministic synthetic multi-object videos.
//!
//! Every clip is a pure function of its [`ClipSpec`]. Objects are textured
//! filled shapes whose shape type is the category; they move on straight
//! lines (optionally jittered), bounce off the frame, occlude each other in a
//! fixed per-clip depth order and, on request, leave the frame and come back
//! somewhere else along the same edge.

mod augment;
mod dataset;
mod rle;

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::mask::{BinaryMask, InstanceMask};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use augment::{augment_pair, augment_pair_with, Affine, AugmentParams};
pub use dataset::{read_dataset, write_dataset, CategoryInfo, Dataset};
pub use rle::{decode_rle, encode_rle, RleMask};

/// Category ids and names; the category of an object is its shape.
pub const CATEGORIES: [(u32, &str); 4] = [(1, "circle"), (2, "square"), (3, "triangle"), (4, "ellipse")];

pub fn category_name(id: u32) -> Option<&'static str> {
    CATEGORIES.iter().find(|(c, _)| *c == id).map(|(_, n)| *n)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionModel {
    Linear,
    LinearPlusJitter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub num_frames: usize,
    pub height: usize,
    pub width: usize,
    pub num_objects: usize,
    pub category_set: Vec<u32>,
    pub motion_model: MotionModel,
    pub occlusion_rate: f64,
    pub exit_reentry: bool,
    pub seed: u64,
}

impl Default for ClipSpec {
    fn default() -> Self {
        Self {
            num_frames: 8,
            height: 128,
            width: 128,
            num_objects: 3,
            category_set: CATEGORIES.iter().map(|c| c.0).collect(),
            motion_model: MotionModel::Linear,
            occlusion_rate: 0.0,
            exit_reentry: false,
            seed: 0,
        }
    }
}

impl ClipSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_frames < 2 {
            return Err(Error::validation("num_frames", "must be at least 2"));
        }
        if self.exit_reentry && self.num_frames < 4 {
            return Err(Error::validation("num_frames", "exit_reentry needs at least 4 frames"));
        }
        if self.height < 64 {
            return Err(Error::validation("height", "must be at least 64"));
        }
        if self.width < 64 {
            return Err(Error::validation("width", "must be at least 64"));
        }
        if self.num_objects < 1 {
            return Err(Error::validation("num_objects", "must be at least 1"));
        }
        if self.num_objects > 64 {
            return Err(Error::validation("num_objects", "at most 64 objects per clip"));
        }
        if self.category_set.is_empty() {
            return Err(Error::validation("category_set", "must not be empty"));
        }
        if let Some(bad) = self.category_set.iter().find(|c| category_name(**c).is_none()) {
            return Err(Error::validation("category_set", format!("unknown category id {bad}")));
        }
        if !(0.0..=1.0).contains(&self.occlusion_rate) {
            return Err(Error::validation("occlusion_rate", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// 8-bit RGB image, row-major, channels interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Frame {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width * 3],
        }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Planar `[3, H, W]` tensor with values in `[0, 1]`.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let (h, w) = (self.height, self.width);
        let inv = T::one() / T::lit(255.0);
        let mut out = vec![T::zero(); 3 * h * w];
        for p in 0..h * w {
            for c in 0..3 {
                out[c * h * w + p] = T::lit(self.data[p * 3 + c] as f64) * inv;
            }
        }
        Tensor::new(&[3, h, w], out)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VideoClip {
    pub clip_id: String,
    pub frames: Vec<Frame>,
}

impl VideoClip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn size(&self) -> (usize, usize) {
        self.frames.first().map(|f| (f.height, f.width)).unwrap_or((0, 0))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackInfo {
    pub track_id: u32,
    pub category_id: u32,
    pub present: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroundTruth {
    pub masks: Vec<InstanceMask>,
    pub objects: Vec<TrackInfo>,
}

/// One annotated object in one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct GtInstance {
    pub track_id: u32,
    pub category_id: u32,
    pub bbox: BBox,
}

impl GroundTruth {
    pub fn num_frames(&self) -> usize {
        self.masks.len()
    }

    pub fn object(&self, track_id: u32) -> Option<&TrackInfo> {
        self.objects.iter().find(|o| o.track_id == track_id)
    }

    pub fn binary_mask(&self, frame: usize, track_id: u32) -> BinaryMask {
        self.masks[frame].binary(track_id as u16)
    }

    /// Visible instances of `frame` with their tight boxes, in track-id order.
    pub fn instances(&self, frame: usize) -> Vec<GtInstance> {
        let mut out = Vec::new();
        for obj in &self.objects {
            if !obj.present.get(frame).copied().unwrap_or(false) {
                continue;
            }
            if let Some(bbox) = self.binary_mask(frame, obj.track_id).bbox() {
                out.push(GtInstance {
                    track_id: obj.track_id,
                    category_id: obj.category_id,
                    bbox,
                });
            }
        }
        out
    }

    /// Single-frame slice.
    pub fn frame(&self, frame: usize) -> GroundTruth {
        GroundTruth {
            masks: vec![self.masks[frame].clone()],
            objects: self
                .objects
                .iter()
                .map(|o| TrackInfo {
                    track_id: o.track_id,
                    category_id: o.category_id,
                    present: vec![o.present[frame]],
                })
                .collect(),
        }
    }

    /// Checks id exclusivity bookkeeping: every non-zero mask id is a known
    /// track and presence flags match the masks.
    pub fn check_consistency(&self) -> Result<()> {
        let mut ids: Vec<u32> = self.objects.iter().map(|o| o.track_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Contract("duplicate track ids".into()));
        }
        for (t, m) in self.masks.iter().enumerate() {
            for id in m.ids_present() {
                let Some(obj) = self.object(id as u32) else {
                    return Err(Error::Contract(format!("frame {t}: mask id {id} is not a known track")));
                };
                if !obj.present[t] {
                    return Err(Error::Contract(format!("frame {t}: track {id} visible but not present")));
                }
            }
        }
        Ok(())
    }
}

/// Filled shape with a stripe texture.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeStyle {
    pub category_id: u32,
    /// Circumradius-like size in pixels.
    pub size: f64,
    pub color: [f64; 3],
    pub stripe_angle: f64,
    pub stripe_period: f64,
}

impl ShapeStyle {
    /// Radius of a circle containing the shape at any rotation.
    pub fn extent(&self) -> f64 {
        match self.category_id {
            2 => 0.8 * std::f64::consts::SQRT_2 * self.size,
            _ => self.size,
        }
    }

    /// Exact area of the continuous shape.
    pub fn area(&self) -> f64 {
        let r = self.size;
        match self.category_id {
            1 => PI * r * r,
            2 => (1.6 * r) * (1.6 * r),
            3 => 3.0 * 3f64.sqrt() / 4.0 * r * r,
            _ => PI * r * 0.6 * r,
        }
    }

    /// Whether the point `(u, v)`, in shape-local coordinates, is inside.
    fn contains_local(&self, u: f64, v: f64) -> bool {
        let r = self.size;
        match self.category_id {
            1 => u * u + v * v <= r * r,
            2 => u.abs() <= 0.8 * r && v.abs() <= 0.8 * r,
            3 => [90.0f64, 210.0, 330.0].iter().all(|deg| {
                let a = deg.to_radians();
                u * a.cos() + v * a.sin() <= r / 2.0
            }),
            _ => (u / r).powi(2) + (v / (0.6 * r)).powi(2) <= 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub cx: f64,
    pub cy: f64,
    pub angle: f64,
}

/// An object with an explicit pose for every frame (`None` = not in the scene).
#[derive(Clone, Debug, PartialEq)]
pub struct ScriptedObject {
    pub track_id: u32,
    pub style: ShapeStyle,
    pub poses: Vec<Option<Pose>>,
}

#[derive(Clone, Debug, PartialEq)]
struct Background {
    base: [f64; 3],
    grad: (f64, f64),
    noise: f64,
    seed: u64,
}

impl Background {
    fn sample(rng: &mut ChaCha8Rng, seed: u64) -> Self {
        let g = rng.gen_range(0.12..0.32);
        Self {
            base: [
                g + rng.gen_range(-0.03..0.03),
                g + rng.gen_range(-0.03..0.03),
                g + rng.gen_range(-0.03..0.03),
            ],
            grad: (rng.gen_range(-0.08..0.08), rng.gen_range(-0.08..0.08)),
            noise: 0.02,
            seed,
        }
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Renders explicit object trajectories. `depth_order` lists track ids from
/// farthest to nearest; nearer objects own the pixels they cover.
pub fn render_scripted(
    clip_id: &str,
    height: usize,
    width: usize,
    num_frames: usize,
    seed: u64,
    objects: &[ScriptedObject],
    depth_order: &[u32],
) -> (VideoClip, GroundTruth) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_ba5e);
    let bg = Background::sample(&mut rng, seed);
    render(clip_id, height, width, num_frames, &bg, objects, depth_order)
}

fn render(
    clip_id: &str,
    height: usize,
    width: usize,
    num_frames: usize,
    bg: &Background,
    objects: &[ScriptedObject],
    depth_order: &[u32],
) -> (VideoClip, GroundTruth) {
    let mut frames = Vec::with_capacity(num_frames);
    let mut masks = Vec::with_capacity(num_frames);
    let ordered: Vec<&ScriptedObject> = depth_order
        .iter()
        .filter_map(|id| objects.iter().find(|o| o.track_id == *id))
        .collect();
    for t in 0..num_frames {
        let mut noise_rng = ChaCha8Rng::seed_from_u64(bg.seed.wrapping_mul(0x9e37_79b9).wrapping_add(t as u64));
        let mut rgb = vec![[0.0f64; 3]; height * width];
        for y in 0..height {
            for x in 0..width {
                let fx = x as f64 / width as f64 - 0.5;
                let fy = y as f64 / height as f64 - 0.5;
                let shade = bg.grad.0 * fx + bg.grad.1 * fy;
                let px = &mut rgb[y * width + x];
                for c in 0..3 {
                    px[c] = bg.base[c] + shade + noise_rng.gen_range(-bg.noise..bg.noise);
                }
            }
        }
        let mut ids = InstanceMask::new(height, width);
        for obj in &ordered {
            let Some(pose) = obj.poses.get(t).copied().flatten() else {
                continue;
            };
            paint(&mut rgb, &mut ids, obj, pose);
        }
        let mut frame = Frame::new(height, width);
        for (p, px) in rgb.iter().enumerate() {
            for c in 0..3 {
                frame.data[p * 3 + c] = quantize(px[c]);
            }
        }
        frames.push(frame);
        masks.push(ids);
    }
    let mut tracks: Vec<TrackInfo> = objects
        .iter()
        .map(|o| TrackInfo {
            track_id: o.track_id,
            category_id: o.style.category_id,
            present: masks.iter().map(|m| m.ids.contains(&(o.track_id as u16))).collect(),
        })
        .collect();
    tracks.sort_by_key(|t| t.track_id);
    (
        VideoClip {
            clip_id: clip_id.to_string(),
            frames,
        },
        GroundTruth { masks, objects: tracks },
    )
}

fn paint(rgb: &mut [[f64; 3]], ids: &mut InstanceMask, obj: &ScriptedObject, pose: Pose) {
    let (w, h) = (ids.width as f64, ids.height as f64);
    let ext = obj.style.extent() + 1.0;
    let x0 = (pose.cx - ext).floor().max(0.0) as usize;
    let y0 = (pose.cy - ext).floor().max(0.0) as usize;
    let x1 = (pose.cx + ext).ceil().min(w) as usize;
    let y1 = (pose.cy + ext).ceil().min(h) as usize;
    if pose.cx + ext < 0.0 || pose.cy + ext < 0.0 || x0 >= x1 || y0 >= y1 {
        return;
    }
    let (s, c) = pose.angle.sin_cos();
    let (ss, sc) = obj.style.stripe_angle.sin_cos();
    for y in y0..y1 {
        for x in x0..x1 {
            let dx = x as f64 + 0.5 - pose.cx;
            let dy = y as f64 + 0.5 - pose.cy;
            let u = dx * c + dy * s;
            let v = -dx * s + dy * c;
            if !obj.style.contains_local(u, v) {
                continue;
            }
            let phase = 2.0 * PI * (u * sc + v * ss) / obj.style.stripe_period;
            let k = 1.0 + 0.12 * phase.sin();
            let idx = y * ids.width + x;
            for ch in 0..3 {
                rgb[idx][ch] = obj.style.color[ch] * k;
            }
            ids.ids[idx] = obj.track_id as u16;
        }
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

struct Motion {
    pos: (f64, f64),
    vel: (f64, f64),
    spin: f64,
    angle: f64,
}

fn simulate(
    m: &Motion,
    ext: f64,
    spec: &ClipSpec,
    jitter: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Option<Pose>> {
    let (w, h) = (spec.width as f64, spec.height as f64);
    let (mut x, mut y) = m.pos;
    let (mut vx, mut vy) = m.vel;
    let mut poses = Vec::with_capacity(spec.num_frames);
    for t in 0..spec.num_frames {
        poses.push(Some(Pose {
            cx: x,
            cy: y,
            angle: m.angle + m.spin * t as f64,
        }));
        let (jx, jy) = match spec.motion_model {
            MotionModel::Linear => (0.0, 0.0),
            MotionModel::LinearPlusJitter => (rng.gen_range(-jitter..=jitter), rng.gen_range(-jitter..=jitter)),
        };
        x += vx + jx;
        y += vy + jy;
        bounce(&mut x, &mut vx, ext, w - ext);
        bounce(&mut y, &mut vy, ext, h - ext);
    }
    poses
}

fn bounce(p: &mut f64, v: &mut f64, lo: f64, hi: f64) {
    if *p < lo {
        *p = (2.0 * lo - *p).min(hi);
        *v = v.abs();
    } else if *p > hi {
        *p = (2.0 * hi - *p).max(lo);
        *v = -v.abs();
    }
}

/// Trajectory that leaves through one edge, stays out for at least one frame,
/// and comes back through the same edge at a different position.
fn exit_reentry_poses(ext: f64, spec: &ClipSpec, angle: f64, rng: &mut ChaCha8Rng) -> Vec<Option<Pose>> {
    let edge = rng.gen_range(0..4u32);
    let horizontal = edge < 2;
    let (len, cross) = if horizontal {
        (spec.width as f64, spec.height as f64)
    } else {
        (spec.height as f64, spec.width as f64)
    };
    let start = rng.gen_range(len / 2.0..(len - ext).max(len / 2.0 + 1e-3));
    let mid = (spec.num_frames - 1) as f64 / 2.0;
    let speed = (len + ext - start) / (mid - 1.0);
    let c0 = rng.gen_range(ext..(cross - ext));
    // Re-enter at least two extents away along the edge when there is room.
    let candidates: Vec<f64> = (0..16)
        .map(|_| rng.gen_range(ext..(cross - ext)))
        .collect();
    let c1 = candidates
        .iter()
        .copied()
        .find(|c| (c - c0).abs() >= 2.2 * ext)
        .unwrap_or_else(|| if c0 < cross / 2.0 { cross - ext } else { ext });
    (0..spec.num_frames)
        .map(|t| {
            let tf = t as f64;
            let along = start + speed * (mid - (tf - mid).abs());
            let across = if tf < mid { c0 } else { c1 };
            // Canonical frame exits towards +along; mirror for the other edges.
            let along = if edge % 2 == 0 { along } else { len - along };
            let (cx, cy) = if horizontal { (along, across) } else { (across, along) };
            Some(Pose { cx, cy, angle })
        })
        .collect()
}

fn min_gap(a: &[Option<Pose>], ea: f64, b: &[Option<Pose>], eb: f64, frames: std::ops::Range<usize>) -> f64 {
    frames
        .filter_map(|t| match (a[t], b[t]) {
            (Some(p), Some(q)) => Some(((p.cx - q.cx).hypot(p.cy - q.cy)) - ea - eb),
            _ => None,
        })
        .fold(f64::INFINITY, f64::min)
}

/// Generates a clip and its ground truth from `spec`; bitwise deterministic.
pub fn generate_clip(spec: &ClipSpec) -> Result<(VideoClip, GroundTruth)> {
    generate_clip_with_id(spec, &format!("synth-{:016x}", spec.seed))
}

pub fn generate_clip_with_id(spec: &ClipSpec, clip_id: &str) -> Result<(VideoClip, GroundTruth)> {
    let plan = plan_clip(spec)?;
    Ok(render(
        clip_id,
        spec.height,
        spec.width,
        spec.num_frames,
        &plan.background,
        &plan.objects,
        &plan.depth_order,
    ))
}

/// Objects, trajectories and depth order sampled for a spec, before rendering.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenePlan {
    pub objects: Vec<ScriptedObject>,
    /// Track ids from farthest to nearest.
    pub depth_order: Vec<u32>,
    background: Background,
}

pub fn plan_clip(spec: &ClipSpec) -> Result<ScenePlan> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let side = spec.height.min(spec.width) as f64;
    let (w, h) = (spec.width as f64, spec.height as f64);
    let bg = Background::sample(&mut rng, spec.seed);

    let n = spec.num_objects;
    let hue0 = rng.gen_range(0.0..360.0);
    let mut hues: Vec<f64> = (0..n).map(|i| hue0 + 360.0 * i as f64 / n as f64).collect();
    hues.shuffle(&mut rng);
    let styles: Vec<ShapeStyle> = (0..n)
        .map(|i| ShapeStyle {
            category_id: *spec.category_set.choose(&mut rng).expect("non-empty"),
            size: rng.gen_range(0.12..0.18) * side,
            color: hsv_to_rgb(hues[i], rng.gen_range(0.6..0.9), rng.gen_range(0.75..0.95)),
            stripe_angle: rng.gen_range(0.0..PI),
            stripe_period: rng.gen_range(6.0..12.0),
        })
        .collect();
    let exit_index = spec.exit_reentry.then(|| rng.gen_range(0..n));
    let wants_overlap: Vec<bool> = (0..n).map(|i| i > 0 && rng.gen_bool(spec.occlusion_rate)).collect();
    let jitter = 0.005 * side;

    let mut poses: Vec<Vec<Option<Pose>>> = Vec::with_capacity(n);
    for i in 0..n {
        let ext = styles[i].extent();
        let angle = rng.gen_range(0.0..2.0 * PI);
        if Some(i) == exit_index {
            poses.push(exit_reentry_poses(ext, spec, angle, &mut rng));
            continue;
        }
        // Crowded scenes may never find a clear start; keep the first draw.
        let mut fallback: Option<Vec<Option<Pose>>> = None;
        let mut best: Option<Vec<Option<Pose>>> = None;
        for _attempt in 0..300 {
            let speed = rng.gen_range(0.01..0.03) * side;
            let dir = rng.gen_range(0.0..2.0 * PI);
            let motion = Motion {
                pos: (rng.gen_range(ext..w - ext), rng.gen_range(ext..h - ext)),
                vel: (speed * dir.cos(), speed * dir.sin()),
                spin: rng.gen_range(-0.05..0.05),
                angle,
            };
            let cand = simulate(&motion, ext, spec, jitter, &mut rng);
            if fallback.is_none() {
                fallback = Some(cand.clone());
            }
            // Every object starts fully visible and unoccluded.
            let clear_start = (0..i).all(|j| min_gap(&cand, ext, &poses[j], styles[j].extent(), 0..1) > 1.0);
            if !clear_start {
                continue;
            }
            let ok = if wants_overlap[i] {
                (0..i).any(|j| {
                    min_gap(&cand, 0.6 * ext, &poses[j], 0.6 * styles[j].extent(), 0..spec.num_frames) < 0.0
                })
            } else {
                (0..i)
                    .filter(|&j| !wants_overlap[j] && Some(j) != exit_index)
                    .all(|j| min_gap(&cand, ext, &poses[j], styles[j].extent(), 0..spec.num_frames) > 1.0)
            };
            if best.is_none() {
                best = Some(cand.clone());
            }
            if ok {
                best = Some(cand);
                break;
            }
        }
        poses.push(best.or(fallback).expect("at least one attempt"));
    }

    let objects: Vec<ScriptedObject> = styles
        .into_iter()
        .zip(poses)
        .enumerate()
        .map(|(i, (style, poses))| ScriptedObject {
            track_id: i as u32 + 1,
            style,
            poses,
        })
        .collect();
    let mut depth: Vec<u32> = (1..=n as u32).collect();
    depth.shuffle(&mut rng);
    Ok(ScenePlan {
        objects,
        depth_order: depth,
        background: bg,
    })
}

/// A set of clips sharing one spec template. Clip `i` is generated with seed
/// `seed ^ i` and id `clip_{i:04}`; its object count is drawn from
/// `min_objects..=num_objects`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub num_clips: usize,
    #[serde(default)]
    pub min_objects: Option<usize>,
    #[serde(flatten)]
    pub clip: ClipSpec,
}

impl CorpusSpec {
    pub fn clip_spec(&self, index: usize) -> ClipSpec {
        let seed = self.clip.seed ^ index as u64;
        let lo = self.min_objects.unwrap_or(self.clip.num_objects).clamp(1, self.clip.num_objects.max(1));
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0xc0ff_ee));
        ClipSpec {
            num_objects: rng.gen_range(lo..=self.clip.num_objects.max(lo)),
            seed,
            ..self.clip.clone()
        }
    }
}

pub fn generate_corpus(spec: &CorpusSpec) -> Result<Vec<(VideoClip, GroundTruth)>> {
    if spec.num_clips == 0 {
        return Err(Error::validation("num_clips", "must be positive"));
    }
    (0..spec.num_clips)
        .map(|i| generate_clip_with_id(&spec.clip_spec(i), &format!("clip_{i:04}")))
        .collect()
}

fn style(rng: &mut ChaCha8Rng, category_id: Option<u32>, size: f64, hue: f64) -> ShapeStyle {
    ShapeStyle {
        category_id: category_id.unwrap_or_else(|| rng.gen_range(1..=4)),
        size,
        color: hsv_to_rgb(hue, 0.8, 0.9),
        stripe_angle: rng.gen_range(0.0..PI),
        stripe_period: rng.gen_range(6.0..12.0),
    }
}

/// Two same-category objects crossing paths, the second passing in front of
/// the first, plus a third distractor.
pub fn scripted_crossing(seed: u64, num_frames: usize, side: usize) -> (VideoClip, GroundTruth) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = side as f64;
    let cat = rng.gen_range(1..=4u32);
    let hue = rng.gen_range(0.0..360.0);
    let size = 0.14 * s;
    let lerp = |a: (f64, f64), b: (f64, f64), t: usize| {
        let f = t as f64 / (num_frames - 1) as f64;
        Some(Pose {
            cx: a.0 + (b.0 - a.0) * f,
            cy: a.1 + (b.1 - a.1) * f,
            angle: 0.3,
        })
    };
    let a = ScriptedObject {
        track_id: 1,
        style: style(&mut rng, Some(cat), size, hue),
        poses: (0..num_frames).map(|t| lerp((0.25 * s, 0.4 * s), (0.75 * s, 0.5 * s), t)).collect(),
    };
    let b = ScriptedObject {
        track_id: 2,
        style: style(&mut rng, Some(cat), size, hue + 150.0),
        poses: (0..num_frames).map(|t| lerp((0.75 * s, 0.55 * s), (0.25 * s, 0.45 * s), t)).collect(),
    };
    let c = ScriptedObject {
        track_id: 3,
        style: style(&mut rng, None, 0.11 * s, hue + 260.0),
        poses: (0..num_frames).map(|t| lerp((0.2 * s, 0.82 * s), (0.35 * s, 0.8 * s), t)).collect(),
    };
    render_scripted(&format!("crossing_{seed}"), side, side, num_frames, seed, &[a, b, c], &[1, 3, 2])
}

/// One object leaves through the right edge, stays out for two frames and
/// re-enters far from where it left; a second object moves slowly elsewhere.
pub fn scripted_reentry(seed: u64, num_frames: usize, side: usize) -> (VideoClip, GroundTruth) {
    assert!(num_frames >= 8, "re-entry script needs at least 8 frames");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = side as f64;
    let hue = rng.gen_range(0.0..360.0);
    let size = 0.13 * s;
    let out_start = num_frames / 2 - 1;
    let out_end = out_start + 2; // exclusive
    let leaver_poses = (0..num_frames)
        .map(|t| {
            if t < out_start {
                let steps = out_start as f64;
                let f = t as f64 / steps;
                Some(Pose {
                    cx: 0.6 * s + (s + size - 0.6 * s) * f,
                    cy: 0.25 * s,
                    angle: 0.2,
                })
            } else if t < out_end {
                None
            } else {
                let steps = (num_frames - 1 - out_end).max(1) as f64;
                let f = (t - out_end) as f64 / steps;
                Some(Pose {
                    cx: s + size - (s + size - 0.6 * s) * f.max(0.35),
                    cy: 0.75 * s,
                    angle: 0.2,
                })
            }
        })
        .collect();
    let a = ScriptedObject {
        track_id: 1,
        style: style(&mut rng, None, size, hue),
        poses: leaver_poses,
    };
    let b = ScriptedObject {
        track_id: 2,
        style: style(&mut rng, None, size, hue + 180.0),
        poses: (0..num_frames)
            .map(|t| {
                Some(Pose {
                    cx: 0.25 * s + 0.01 * s * t as f64,
                    cy: 0.5 * s,
                    angle: 0.0,
                })
            })
            .collect(),
    };
    render_scripted(&format!("reentry_{seed}"), side, side, num_frames, seed, &[a, b], &[1, 2])
}

#[cfg(test)]
mod tests;
