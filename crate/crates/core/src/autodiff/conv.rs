//! 2-D convolution (im2col + GEMM) and nearest-neighbour upsampling.

use super::{BackwardOp, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }
}

fn im2col<T: Scalar>(x: &[T], g: &Geometry) -> Vec<T> {
    let (ho, wo) = (g.ho, g.wo);
    let mut cols = vec![T::zero(); g.rows() * g.cols()];
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let out_row = &mut dst[oy * wo..(oy + 1) * wo];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            *o = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], g: &Geometry) -> Vec<T> {
    let (ho, wo) = (g.ho, g.wo);
    let mut x = vec![T::zero(); g.cin * g.h * g.w];
    for c in 0..g.cin {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst_row[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

struct Conv2dOp<T> {
    geom: Geometry,
    /// im2col buffer; `None` for pointwise convolutions where it equals the input.
    cols: Option<Vec<T>>,
}

impl<T: Scalar> BackwardOp<T> for Conv2dOp<T> {
    fn backward(
        &self,
        grad: &Tensor<T>,
        _out: &Tensor<T>,
        parents: &[Var<T>],
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let g = &self.geom;
        let w = parents[1].value();
        let cout = w.shape()[0];
        let (kk, l) = (g.rows(), g.cols());
        let dy = grad.data();
        let cols: &[T] = match &self.cols {
            Some(c) => c,
            None => parents[0].value().data(),
        };

        let dx = needs[0].then(|| {
            let mut dcols = vec![T::zero(); kk * l];
            // dcols = W^T dy
            T::gemm(kk, cout, l, T::one(), w.data(), 1, kk as isize, dy, l as isize, 1, T::zero(), &mut dcols, l as isize, 1);
            let data = if g.is_pointwise() { dcols } else { col2im(&dcols, g) };
            Tensor::new(parents[0].shape(), data)
        });
        let dw = needs[1].then(|| {
            let mut d = vec![T::zero(); cout * kk];
            // dW = dy cols^T
            T::gemm(cout, l, kk, T::one(), dy, l as isize, 1, cols, 1, l as isize, T::zero(), &mut d, kk as isize, 1);
            Tensor::new(w.shape(), d)
        });
        let mut out = vec![dx, dw];
        if parents.len() == 3 {
            out.push(needs[2].then(|| {
                let d: Vec<T> = dy.chunks_exact(l).map(|r| r.iter().copied().sum()).collect();
                Tensor::new(&[cout], d)
            }));
        }
        out
    }
}

struct Upsample2xOp;

impl<T: Scalar> BackwardOp<T> for Upsample2xOp {
    fn backward(
        &self,
        grad: &Tensor<T>,
        _out: &Tensor<T>,
        parents: &[Var<T>],
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let (c, h, w) = parents[0].value().chw();
        let g = grad.data();
        let mut d = vec![T::zero(); c * h * w];
        let w2 = 2 * w;
        for ch in 0..c {
            for y in 0..2 * h {
                for x in 0..w2 {
                    d[(ch * h + y / 2) * w + x / 2] += g[(ch * 2 * h + y) * w2 + x];
                }
            }
        }
        vec![Some(Tensor::new(parents[0].shape(), d))]
    }
}

impl<T: Scalar> Var<T> {
    /// Cross-correlation of `self: [Cin, H, W]` with `weight: [Cout, Cin, k, k]`.
    pub fn conv2d(&self, weight: &Var<T>, bias: Option<&Var<T>>, stride: usize, pad: usize) -> Self {
        let (cin, h, w) = self.value().chw();
        let [cout, wcin, k, k2] = weight.shape()[..] else {
            panic!("conv2d weight must be 4-D, got {:?}", weight.shape())
        };
        assert_eq!(k, k2, "square kernels only");
        assert_eq!(cin, wcin, "conv2d channel mismatch: input {cin}, weight {wcin}");
        assert!(h + 2 * pad >= k && w + 2 * pad >= k, "conv2d input smaller than kernel");
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        let geom = Geometry {
            cin,
            h,
            w,
            k,
            stride,
            pad,
            ho,
            wo,
        };
        let (kk, l) = (geom.rows(), geom.cols());
        let cols = (!geom.is_pointwise()).then(|| im2col(self.value().data(), &geom));
        let src: &[T] = cols.as_deref().unwrap_or(self.value().data());

        let mut y = vec![T::zero(); cout * l];
        if let Some(b) = bias {
            assert_eq!(b.shape(), [cout], "conv2d bias shape");
            for (row, &bv) in y.chunks_exact_mut(l).zip(b.value().data()) {
                row.fill(bv);
            }
        }
        T::gemm(cout, kk, l, T::one(), weight.value().data(), kk as isize, 1, src, l as isize, 1, T::one(), &mut y, l as isize, 1);

        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        // The column buffer is only needed for the weight gradient.
        let cols = if weight.requires_grad() { cols } else { None };
        Var::from_op(Tensor::new(&[cout, ho, wo], y), parents, Conv2dOp { geom, cols })
    }

    /// Nearest-neighbour 2x upsampling of a `[C, H, W]` map.
    pub fn upsample2x(&self) -> Self {
        let (c, h, w) = self.value().chw();
        let x = self.value().data();
        let w2 = 2 * w;
        let mut y = vec![T::zero(); c * 4 * h * w];
        for ch in 0..c {
            for yy in 0..2 * h {
                for xx in 0..w2 {
                    y[(ch * 2 * h + yy) * w2 + xx] = x[(ch * h + yy / 2) * w + xx / 2];
                }
            }
        }
        Var::from_op(Tensor::new(&[c, 2 * h, w2], y), vec![self.clone()], Upsample2xOp)
    }
}
