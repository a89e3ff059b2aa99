use crate::synthdata::GtInstance;

/// Training targets of one pyramid level, one entry per location in
/// row-major order. Location `(i, j)` sits at pixel `(j * stride, i * stride)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelTargets {
    pub stride: usize,
    pub height: usize,
    pub width: usize,
    /// Class index (`category_id - 1`) of positive locations.
    pub class: Vec<Option<usize>>,
    pub ltrb: Vec<[f64; 4]>,
    pub centerness: Vec<f64>,
    pub positive: Vec<bool>,
    /// Index into the ground-truth list of the assigned object.
    pub object: Vec<Option<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseTargets {
    pub levels: Vec<LevelTargets>,
}

impl DenseTargets {
    pub fn num_positive(&self) -> usize {
        self.levels.iter().map(|l| l.positive.iter().filter(|&&p| p).count()).sum()
    }
}

/// `sqrt(min(l,r)/max(l,r) * min(t,b)/max(t,b))`.
pub fn centerness(ltrb: [f64; 4]) -> f64 {
    let [l, t, r, b] = ltrb;
    ((l.min(r) / l.max(r)) * (t.min(b) / t.max(b))).sqrt()
}

/// FCOS-style assignment. `geometry` holds `(stride, h, w)` per level and
/// `ranges` the `(lo, hi]` bounds on `max(l, t, r, b)`.
pub fn assign_targets(gt: &[GtInstance], geometry: &[(usize, usize, usize)], ranges: &[(f64, f64)]) -> DenseTargets {
    assert_eq!(geometry.len(), ranges.len(), "one scale range per level");
    let levels = geometry
        .iter()
        .zip(ranges)
        .map(|(&(stride, height, width), &(lo, hi))| {
            let n = height * width;
            let mut lt = LevelTargets {
                stride,
                height,
                width,
                class: vec![None; n],
                ltrb: vec![[0.0; 4]; n],
                centerness: vec![0.0; n],
                positive: vec![false; n],
                object: vec![None; n],
            };
            for i in 0..height {
                for j in 0..width {
                    let (x, y) = ((j * stride) as f64, (i * stride) as f64);
                    let mut best: Option<(f64, usize, [f64; 4])> = None;
                    for (k, g) in gt.iter().enumerate() {
                        let b = &g.bbox;
                        let d = [x - b.x1, y - b.y1, b.x2 - x, b.y2 - y];
                        let dmin = d.iter().copied().fold(f64::INFINITY, f64::min);
                        let dmax = d.iter().copied().fold(0.0, f64::max);
                        if dmin <= 0.0 || dmax <= lo || dmax > hi {
                            continue;
                        }
                        let area = b.area();
                        if best.is_none_or(|(a, _, _)| area < a) {
                            best = Some((area, k, d));
                        }
                    }
                    if let Some((_, k, d)) = best {
                        let p = i * width + j;
                        lt.positive[p] = true;
                        lt.class[p] = Some(gt[k].category_id as usize - 1);
                        lt.ltrb[p] = d;
                        lt.centerness[p] = centerness(d);
                        lt.object[p] = Some(k);
                    }
                }
            }
            lt
        })
        .collect();
    DenseTargets { levels }
}
