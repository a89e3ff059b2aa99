//! Region (J) and boundary (F) measures for category-agnostic tracking.
//!
//! Each ground-truth object is paired with at most one predicted track by a
//! maximum-weight bipartite matching on clip-mean IoU. Objects left without a
//! partner are scored against an empty track.

use serde::{Deserialize, Serialize};

use super::ClipEval;
use crate::mask::BinaryMask;

/// Boundary tolerance as a fraction of the image diagonal.
pub const BOUNDARY_TOLERANCE: f64 = 0.008;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JfMetrics {
    pub j_mean: f64,
    pub j_recall: f64,
    pub j_decay: f64,
    pub f_mean: f64,
    pub f_recall: f64,
    pub f_decay: f64,
    pub jf_mean: f64,
}

/// IoU of one frame; two empty masks agree perfectly.
pub fn frame_iou(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let union = a.union(b);
    if union == 0 {
        1.0
    } else {
        a.intersection(b) as f64 / union as f64
    }
}

/// Foreground pixels with a 4-neighbour outside the mask or the image. The
/// result is an 8-connected contour.
pub fn boundary(m: &BinaryMask) -> BinaryMask {
    let (h, w) = (m.height, m.width);
    BinaryMask::from_fn(h, w, |x, y| {
        m.get(x, y)
            && (x == 0
                || y == 0
                || x + 1 == w
                || y + 1 == h
                || !m.get(x - 1, y)
                || !m.get(x + 1, y)
                || !m.get(x, y - 1)
                || !m.get(x, y + 1))
    })
}

/// Offsets within Euclidean distance `r`.
fn disk(r: f64) -> Vec<(isize, isize)> {
    let k = r.floor() as isize;
    let mut out = Vec::new();
    for dy in -k..=k {
        for dx in -k..=k {
            if ((dx * dx + dy * dy) as f64) <= r * r {
                out.push((dx, dy));
            }
        }
    }
    out
}

fn dilate(m: &BinaryMask, offsets: &[(isize, isize)]) -> BinaryMask {
    let (h, w) = (m.height as isize, m.width as isize);
    let mut out = BinaryMask::empty(m.height, m.width);
    for y in 0..h {
        for x in 0..w {
            if !m.get(x as usize, y as usize) {
                continue;
            }
            for &(dx, dy) in offsets {
                let (u, v) = (x + dx, y + dy);
                if (0..w).contains(&u) && (0..h).contains(&v) {
                    out.set(u as usize, v as usize, true);
                }
            }
        }
    }
    out
}

/// Boundary F-measure of one frame with a tolerance of 0.8% of the diagonal.
pub fn boundary_f(pred: &BinaryMask, gt: &BinaryMask) -> f64 {
    let (pb, gb) = (boundary(pred), boundary(gt));
    let (np, ng) = (pb.area(), gb.area());
    match (np, ng) {
        (0, 0) => return 1.0,
        (0, _) | (_, 0) => return 0.0,
        _ => {}
    }
    let tol = BOUNDARY_TOLERANCE * ((gt.height * gt.height + gt.width * gt.width) as f64).sqrt();
    let offsets = disk(tol);
    let precision = pb.intersection(&dilate(&gb, &offsets)) as f64 / np as f64;
    let recall = gb.intersection(&dilate(&pb, &offsets)) as f64 / ng as f64;
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Mean over the first temporal quarter minus mean over the last quarter.
/// Clips shorter than four frames compare the first and last frame.
pub fn decay(per_frame: &[f64]) -> f64 {
    let n = per_frame.len();
    if n == 0 {
        return 0.0;
    }
    if n < 4 {
        return per_frame[0] - per_frame[n - 1];
    }
    // Bin edges at round(linspace(1, n, 5)) - 1, inclusive on both ends.
    let edge = |k: usize| ((1.0 + (n - 1) as f64 * k as f64 / 4.0) + 1e-10).round() as usize - 1;
    let mean = |a: usize, b: usize| per_frame[a..=b].iter().sum::<f64>() / (b - a + 1) as f64;
    mean(edge(0), edge(1)) - mean(edge(3), edge(4))
}

/// Maximum-weight assignment of every row to a distinct column
/// (`rows <= cols`), via the Hungarian method on negated weights.
pub fn max_weight_assignment(weights: &[Vec<f64>]) -> Vec<usize> {
    let n = weights.len();
    if n == 0 {
        return Vec::new();
    }
    let m = weights[0].len();
    assert!(n <= m, "more rows than columns");
    let cost = |i: usize, j: usize| -weights[i - 1][j - 1];
    // 1-based potentials; p[j] is the row assigned to column j.
    let (mut u, mut v) = (vec![0.0; n + 1], vec![0.0; m + 1]);
    let (mut p, mut way) = (vec![0usize; m + 1], vec![0usize; m + 1]);
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

/// Per-object (per-frame J, per-frame F) for one clip.
pub(crate) fn clip_scores(clip: &ClipEval) -> Vec<(Vec<f64>, Vec<f64>)> {
    let Some(first) = clip.gt.first() else {
        return Vec::new();
    };
    let empty: Vec<BinaryMask> = first.masks.iter().map(|m| BinaryMask::empty(m.height, m.width)).collect();
    let mut cands: Vec<&[BinaryMask]> = clip.preds.iter().map(|p| p.masks.as_slice()).collect();
    while cands.len() < clip.gt.len() {
        cands.push(&empty);
    }
    let j: Vec<Vec<Vec<f64>>> = clip
        .gt
        .iter()
        .map(|g| cands.iter().map(|c| c.iter().zip(&g.masks).map(|(p, q)| frame_iou(p, q)).collect()).collect())
        .collect();
    let weights: Vec<Vec<f64>> = j
        .iter()
        .map(|row| row.iter().map(|f| f.iter().sum::<f64>() / f.len().max(1) as f64).collect())
        .collect();
    let assignment = max_weight_assignment(&weights);
    clip.gt
        .iter()
        .zip(assignment)
        .enumerate()
        .map(|(g, (gt, c))| {
            let f = cands[c].iter().zip(&gt.masks).map(|(p, q)| boundary_f(p, q)).collect();
            (j[g][c].clone(), f)
        })
        .collect()
}

/// Dataset-level J and F, averaging over every ground-truth object.
pub fn davis_metrics(clips: &[ClipEval]) -> JfMetrics {
    let objects: Vec<(Vec<f64>, Vec<f64>)> = clips.iter().flat_map(clip_scores).collect();
    if objects.is_empty() {
        return JfMetrics::default();
    }
    let n = objects.len() as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let stats = |pick: fn(&(Vec<f64>, Vec<f64>)) -> &Vec<f64>| {
        let (mut m, mut r, mut d) = (0.0, 0.0, 0.0);
        for o in &objects {
            let s = mean(pick(o));
            m += s;
            r += if s > 0.5 { 1.0 } else { 0.0 };
            d += decay(pick(o));
        }
        (m / n, r / n, d / n)
    };
    let (j_mean, j_recall, j_decay) = stats(|o| &o.0);
    let (f_mean, f_recall, f_decay) = stats(|o| &o.1);
    JfMetrics {
        j_mean,
        j_recall,
        j_decay,
        f_mean,
        f_recall,
        f_decay,
        jf_mean: (j_mean + f_mean) / 2.0,
    }
}
