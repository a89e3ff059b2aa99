//! RoI Align: bilinear pooling of a box into a fixed grid.

use super::{BackwardOp, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Box in the sampled grid's own coordinate frame (grid cell `(i, j)` sits
/// at coordinate `(j, i)`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoiBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl RoiBox {
    pub fn is_degenerate(&self) -> bool {
        !(self.x2 > self.x1 && self.y2 > self.y1)
            || ![self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite())
    }
}

/// For every output cell: the (flat spatial index, weight) taps that produce it.
fn taps(h: usize, w: usize, roi: RoiBox, out: usize, sampling: usize) -> Vec<Vec<(usize, f64)>> {
    let bin_h = (roi.y2 - roi.y1) / out as f64;
    let bin_w = (roi.x2 - roi.x1) / out as f64;
    let norm = 1.0 / (sampling * sampling) as f64;
    let mut cells = Vec::with_capacity(out * out);
    for py in 0..out {
        for px in 0..out {
            let mut cell: Vec<(usize, f64)> = Vec::with_capacity(4 * sampling * sampling);
            for sy in 0..sampling {
                let y = roi.y1 + bin_h * (py as f64 + (sy as f64 + 0.5) / sampling as f64);
                for sx in 0..sampling {
                    let x = roi.x1 + bin_w * (px as f64 + (sx as f64 + 0.5) / sampling as f64);
                    bilinear_taps(h, w, y, x, norm, &mut cell);
                }
            }
            cells.push(cell);
        }
    }
    cells
}

/// Bilinear interpolation taps at `(y, x)` with border clamping.
fn bilinear_taps(h: usize, w: usize, y: f64, x: f64, scale: f64, out: &mut Vec<(usize, f64)>) {
    let (y0, y1, ly) = axis_taps(y, h);
    let (x0, x1, lx) = axis_taps(x, w);
    let (hy, hx) = (1.0 - ly, 1.0 - lx);
    out.push((y0 * w + x0, hy * hx * scale));
    out.push((y0 * w + x1, hy * lx * scale));
    out.push((y1 * w + x0, ly * hx * scale));
    out.push((y1 * w + x1, ly * lx * scale));
}

fn axis_taps(v: f64, n: usize) -> (usize, usize, f64) {
    let max = (n - 1) as f64;
    let v = v.clamp(0.0, max);
    let lo = v.floor() as usize;
    if lo + 1 >= n {
        (n - 1, n - 1, 0.0)
    } else {
        (lo, lo + 1, v - lo as f64)
    }
}

/// Pools `x: [C, H, W]` inside `roi` into `[C, out, out]`, averaging
/// `sampling x sampling` bilinear samples per output cell.
pub fn roi_align_forward<T: Scalar>(x: &Tensor<T>, roi: RoiBox, out: usize, sampling: usize) -> Tensor<T> {
    let (_, h, w) = x.chw();
    pool(x, &taps(h, w, roi, out, sampling), out)
}

fn pool<T: Scalar>(x: &Tensor<T>, cells: &[Vec<(usize, f64)>], out: usize) -> Tensor<T> {
    let (c, h, w) = x.chw();
    let data = x.data();
    let mut y = Vec::with_capacity(c * out * out);
    for ch in 0..c {
        let plane = &data[ch * h * w..(ch + 1) * h * w];
        for cell in cells {
            let v: f64 = cell.iter().map(|&(i, wt)| plane[i].as_f64() * wt).sum();
            y.push(T::lit(v));
        }
    }
    Tensor::new(&[c, out, out], y)
}

struct RoiAlignOp {
    cells: Vec<Vec<(usize, f64)>>,
}

impl<T: Scalar> BackwardOp<T> for RoiAlignOp {
    fn backward(
        &self,
        grad: &Tensor<T>,
        _out: &Tensor<T>,
        parents: &[Var<T>],
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let (c, h, w) = parents[0].value().chw();
        let n = self.cells.len();
        let g = grad.data();
        let mut d = vec![T::zero(); c * h * w];
        for ch in 0..c {
            let plane = &mut d[ch * h * w..(ch + 1) * h * w];
            for (cell, &gv) in self.cells.iter().zip(&g[ch * n..(ch + 1) * n]) {
                for &(i, wt) in cell {
                    plane[i] += gv * T::lit(wt);
                }
            }
        }
        vec![Some(Tensor::new(parents[0].shape(), d))]
    }
}

impl<T: Scalar> Var<T> {
    /// Differentiable RoI Align (gradient flows to the feature map only).
    pub fn roi_align(&self, roi: RoiBox, out: usize, sampling: usize) -> Self {
        assert!(!roi.is_degenerate(), "degenerate RoI {roi:?}");
        let (_, h, w) = self.value().chw();
        let cells = taps(h, w, roi, out, sampling);
        let y = pool(self.value(), &cells, out);
        Var::from_op(y, vec![self.clone()], RoiAlignOp { cells })
    }
}
