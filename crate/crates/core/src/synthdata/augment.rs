//! Static-image to pseudo-video augmentation: a random affine warp plus
//! linear motion blur turns one annotated frame into a two-frame clip.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Frame, GroundTruth, TrackInfo, VideoClip};
use crate::error::{Error, Result};
use crate::mask::InstanceMask;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    /// Maximum absolute rotation in degrees.
    pub rotation_deg: f64,
    /// Maximum absolute translation as a fraction of the image side.
    pub translation_frac: f64,
    pub scale_range: (f64, f64),
    pub shear_deg: f64,
    /// Inclusive motion-blur kernel length range in pixels.
    pub blur_range: (usize, usize),
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            rotation_deg: 10.0,
            translation_frac: 0.1,
            scale_range: (0.9, 1.1),
            shear_deg: 5.0,
            blur_range: (3, 9),
        }
    }
}

/// Affine map about the image centre: `x' = m (x - c) + c + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine {
    pub m: [[f64; 2]; 2],
    pub t: (f64, f64),
}

impl Affine {
    pub fn identity() -> Self {
        Self::translation(0.0, 0.0)
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self {
            m: [[1.0, 0.0], [0.0, 1.0]],
            t: (dx, dy),
        }
    }

    /// Rotation, then shear along x, then isotropic scale.
    pub fn compose(rotation_deg: f64, shear_deg: f64, scale: f64, t: (f64, f64)) -> Self {
        let (s, c) = rotation_deg.to_radians().sin_cos();
        let k = shear_deg.to_radians().tan();
        let r = [[c, -s], [s, c]];
        let m = [
            [scale * (r[0][0] + k * r[1][0]), scale * (r[0][1] + k * r[1][1])],
            [scale * r[1][0], scale * r[1][1]],
        ];
        Self { m, t }
    }

    fn inverse_matrix(&self) -> [[f64; 2]; 2] {
        let [[a, b], [c, d]] = self.m;
        let det = a * d - b * c;
        [[d / det, -b / det], [-c / det, a / det]]
    }
}

fn sample_params(params: &AugmentParams, h: usize, w: usize, rng: &mut ChaCha8Rng) -> (Affine, usize, f64) {
    let sym = |rng: &mut ChaCha8Rng, r: f64| if r > 0.0 { rng.gen_range(-r..=r) } else { 0.0 };
    let rot = sym(rng, params.rotation_deg);
    let shear = sym(rng, params.shear_deg);
    let (slo, shi) = params.scale_range;
    let scale = if shi > slo { rng.gen_range(slo..=shi) } else { slo };
    let dx = sym(rng, params.translation_frac * w as f64);
    let dy = sym(rng, params.translation_frac * h as f64);
    let (blo, bhi) = params.blur_range;
    let blur = if bhi > blo { rng.gen_range(blo..=bhi) } else { blo };
    let angle = if dx == 0.0 && dy == 0.0 { 0.0 } else { dy.atan2(dx) };
    (Affine::compose(rot, shear, scale, (dx, dy)), blur, angle)
}

/// Two-frame pseudo clip from a single annotated image, with the warp and
/// blur drawn from `params` using `seed`.
pub fn augment_pair(
    image: &Frame,
    gt: &GroundTruth,
    params: &AugmentParams,
    seed: u64,
) -> Result<(VideoClip, GroundTruth)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (affine, blur, angle) = sample_params(params, image.height, image.width, &mut rng);
    augment_pair_with(image, gt, &affine, blur, angle)
}

/// Deterministic core of [`augment_pair`] with explicit warp and blur.
/// A blur length of 0 or 1 disables blurring.
pub fn augment_pair_with(
    image: &Frame,
    gt: &GroundTruth,
    affine: &Affine,
    blur_len: usize,
    blur_angle: f64,
) -> Result<(VideoClip, GroundTruth)> {
    let (h, w) = (image.height, image.width);
    if gt.masks.len() != 1 || gt.objects.iter().any(|o| o.present.len() != 1) {
        return Err(Error::Shape("augment_pair expects single-frame ground truth".into()));
    }
    let mask = &gt.masks[0];
    if (mask.height, mask.width) != (h, w) {
        return Err(Error::Shape(format!(
            "mask is {}x{} but image is {h}x{w}",
            mask.height, mask.width
        )));
    }
    let inv = affine.inverse_matrix();
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let source = |x: usize, y: usize| {
        let px = x as f64 + 0.5 - cx - affine.t.0;
        let py = y as f64 + 0.5 - cy - affine.t.1;
        (inv[0][0] * px + inv[0][1] * py + cx, inv[1][0] * px + inv[1][1] * py + cy)
    };

    let mut warped = vec![[0.0f64; 3]; h * w];
    let mut ids = InstanceMask::new(h, w);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = source(x, y);
            warped[y * w + x] = bilinear_rgb(image, sx - 0.5, sy - 0.5);
            let (ix, iy) = (sx.floor(), sy.floor());
            if ix >= 0.0 && iy >= 0.0 && (ix as usize) < w && (iy as usize) < h {
                ids.ids[y * w + x] = mask.get(ix as usize, iy as usize);
            }
        }
    }
    let blurred = motion_blur(&warped, h, w, blur_len, blur_angle);
    let mut frame1 = Frame::new(h, w);
    for (p, px) in blurred.iter().enumerate() {
        for c in 0..3 {
            frame1.data[p * 3 + c] = super::quantize(px[c]);
        }
    }

    let objects = gt
        .objects
        .iter()
        .map(|o| TrackInfo {
            track_id: o.track_id,
            category_id: o.category_id,
            present: vec![o.present[0], o.present[0] && ids.ids.contains(&(o.track_id as u16))],
        })
        .collect();
    Ok((
        VideoClip {
            clip_id: "augmented".into(),
            frames: vec![image.clone(), frame1],
        },
        GroundTruth {
            masks: vec![mask.clone(), ids],
            objects,
        },
    ))
}

/// Bilinear sample at index-space coordinates with edge clamping.
fn bilinear_rgb(img: &Frame, x: f64, y: f64) -> [f64; 3] {
    let (w, h) = (img.width, img.height);
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let p = |xx: usize, yy: usize| img.data[(yy * w + xx) * 3 + c] as f64 / 255.0;
        let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
        let bot = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
        *o = top * (1.0 - fy) + bot * fy;
    }
    out
}

fn motion_blur(src: &[[f64; 3]], h: usize, w: usize, len: usize, angle: f64) -> Vec<[f64; 3]> {
    if len <= 1 {
        return src.to_vec();
    }
    let (s, c) = angle.sin_cos();
    let sample = |x: f64, y: f64| {
        let x = x.clamp(0.0, (w - 1) as f64);
        let y = y.clamp(0.0, (h - 1) as f64);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let mut out = [0.0; 3];
        for (ch, o) in out.iter_mut().enumerate() {
            let top = src[y0 * w + x0][ch] * (1.0 - fx) + src[y0 * w + x1][ch] * fx;
            let bot = src[y1 * w + x0][ch] * (1.0 - fx) + src[y1 * w + x1][ch] * fx;
            *o = top * (1.0 - fy) + bot * fy;
        }
        out
    };
    let half = (len - 1) as f64 / 2.0;
    let mut out = vec![[0.0; 3]; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for k in 0..len {
                let d = k as f64 - half;
                let v = sample(x as f64 + d * c, y as f64 + d * s);
                for ch in 0..3 {
                    acc[ch] += v[ch];
                }
            }
            out[y * w + x] = acc.map(|a| a / len as f64);
        }
    }
    out
}
