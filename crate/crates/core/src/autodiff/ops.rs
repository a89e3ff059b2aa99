use super::{BackwardOp, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub(crate) fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

#[derive(Clone, Copy, Debug)]
enum Unary {
    Silu,
    Sigmoid,
    Softplus,
    Exp,
    Square,
}

struct UnaryOp(Unary);

impl<T: Scalar> BackwardOp<T> for UnaryOp {
    fn backward(
        &self,
        grad: &Tensor<T>,
        out: &Tensor<T>,
        parents: &[Var<T>],
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let x = parents[0].value();
        let two = T::lit(2.0);
        let d: Vec<T> = match self.0 {
            Unary::Silu => x
                .data()
                .iter()
                .zip(grad.data())
                .map(|(&x, &g)| {
                    let s = sigmoid(x);
                    g * (s + x * s * (T::one() - s))
                })
                .collect(),
            Unary::Sigmoid => out
                .data()
                .iter()
                .zip(grad.data())
                .map(|(&s, &g)| g * s * (T::one() - s))
                .collect(),
            Unary::Softplus => x
                .data()
                .iter()
                .zip(grad.data())
                .map(|(&x, &g)| g * sigmoid(x))
                .collect(),
            Unary::Exp => out
                .data()
                .iter()
                .zip(grad.data())
                .map(|(&e, &g)| g * e)
                .collect(),
            Unary::Square => x
                .data()
                .iter()
                .zip(grad.data())
                .map(|(&x, &g)| g * two * x)
                .collect(),
        };
        vec![Some(Tensor::new(x.shape(), d))]
    }
}

enum Binary {
    Add,
    Sub,
    Mul,
}

struct BinaryOp(Binary);

impl<T: Scalar> BackwardOp<T> for BinaryOp {
    fn backward(
        &self,
        grad: &Tensor<T>,
        _out: &Tensor<T>,
        parents: &[Var<T>],
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        match self.0 {
            Binary::Add => vec![
                needs[0].then(|| grad.clone()),
                needs[1].then(|| grad.clone()),
            ],
            Binary::Sub => vec![
                needs[0].then(|| grad.clone()),
                needs[1].then(|| grad.map(|g| -g)),
            ],
            Binary::Mul => {
                let a = parents[0].value();
                let b = parents[1].value();
                vec![
                    needs[0].then(|| grad.zip_map(b, |g, b| g * b)),
                    needs[1].then(|| grad.zip_map(a, |g, a| g * a)),
                ]
            }
        }
    }
}

struct ScaleOp<T>(T);

impl<T: Scalar> BackwardOp<T> for ScaleOp<T> {
    fn backward(
        &self,
        grad: &Tensor<T>,
        _out: &Tensor<T>,
        _parents: &[Var<T>],
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let s = self.0;
        vec![Some(grad.map(|g| g * s))]
    }
}

struct ReshapeOp;

impl<T: Scalar> BackwardOp<T> for ReshapeOp {
    fn backward(
        &self,
        grad: &Tensor<T>,
        _out: &Tensor<T>,
        parents: &[Var<T>],
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        vec![Some(grad.clone().reshaped(parents[0].shape()))]
    }
}

/// Splits a shape around `axis` into (outer, axis length, inner).
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

struct ConcatOp {
    axis: usize,
}

impl<T: Scalar> BackwardOp<T> for ConcatOp {
    fn backward(
        &self,
        grad: &Tensor<T>,
        _out: &Tensor<T>,
        parents: &[Var<T>],
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let (outer, total, inner) = axis_split(grad.shape(), self.axis);
        let g = grad.data();
        let mut offset = 0;
        parents
            .iter()
            .zip(needs)
            .map(|(p, &need)| {
                let len = p.shape()[self.axis];
                let start = offset;
                offset += len;
                need.then(|| {
                    let mut d = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let base = (o * total + start) * inner;
                        d.extend_from_slice(&g[base..base + len * inner]);
                    }
                    Tensor::new(p.shape(), d)
                })
            })
            .collect()
    }
}

struct NarrowOp {
    axis: usize,
    start: usize,
}

impl<T: Scalar> BackwardOp<T> for NarrowOp {
    fn backward(
        &self,
        grad: &Tensor<T>,
        _out: &Tensor<T>,
        parents: &[Var<T>],
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let shape = parents[0].shape();
        let (outer, total, inner) = axis_split(shape, self.axis);
        let len = grad.shape()[self.axis];
        let mut d = vec![T::zero(); outer * total * inner];
        let g = grad.data();
        for o in 0..outer {
            let dst = (o * total + self.start) * inner;
            let src = o * len * inner;
            d[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
        }
        vec![Some(Tensor::new(shape, d))]
    }
}

struct SumOp;

impl<T: Scalar> BackwardOp<T> for SumOp {
    fn backward(
        &self,
        grad: &Tensor<T>,
        _out: &Tensor<T>,
        parents: &[Var<T>],
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        vec![Some(Tensor::full(parents[0].shape(), grad.data()[0]))]
    }
}

/// `y = x W^T + b` for `x: [N, in]`, `W: [out, in]`, `b: [out]`.
struct LinearOp;

impl<T: Scalar> BackwardOp<T> for LinearOp {
    fn backward(
        &self,
        grad: &Tensor<T>,
        _out: &Tensor<T>,
        parents: &[Var<T>],
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let x = parents[0].value();
        let w = parents[1].value();
        let (n, din) = (x.shape()[0], x.shape()[1]);
        let dout = w.shape()[0];
        let g = grad.data();
        let dx = needs[0].then(|| {
            let mut d = vec![T::zero(); n * din];
            T::gemm(n, dout, din, T::one(), g, dout as isize, 1, w.data(), din as isize, 1, T::zero(), &mut d, din as isize, 1);
            Tensor::new(x.shape(), d)
        });
        let dw = needs[1].then(|| {
            let mut d = vec![T::zero(); dout * din];
            T::gemm(dout, n, din, T::one(), g, 1, dout as isize, x.data(), din as isize, 1, T::zero(), &mut d, din as isize, 1);
            Tensor::new(w.shape(), d)
        });
        let mut out = vec![dx, dw];
        if parents.len() == 3 {
            out.push(needs[2].then(|| {
                let mut d = vec![T::zero(); dout];
                for row in g.chunks_exact(dout) {
                    for (acc, &v) in d.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                Tensor::new(&[dout], d)
            }));
        }
        out
    }
}

struct GatherRowsOp {
    index: Vec<usize>,
}

impl<T: Scalar> BackwardOp<T> for GatherRowsOp {
    fn backward(
        &self,
        grad: &Tensor<T>,
        _out: &Tensor<T>,
        parents: &[Var<T>],
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let shape = parents[0].shape();
        let d = shape[1];
        let mut acc = vec![T::zero(); shape[0] * d];
        for (row, &src) in grad.data().chunks_exact(d).zip(&self.index) {
            for (a, &g) in acc[src * d..(src + 1) * d].iter_mut().zip(row) {
                *a += g;
            }
        }
        vec![Some(Tensor::new(shape, acc))]
    }
}

struct SegmentSumOp {
    segment: Vec<usize>,
}

impl<T: Scalar> BackwardOp<T> for SegmentSumOp {
    fn backward(
        &self,
        grad: &Tensor<T>,
        _out: &Tensor<T>,
        parents: &[Var<T>],
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let shape = parents[0].shape();
        let d = shape[1];
        let g = grad.data();
        let mut out = Vec::with_capacity(shape[0] * d);
        for &s in &self.segment {
            out.extend_from_slice(&g[s * d..(s + 1) * d]);
        }
        vec![Some(Tensor::new(shape, out))]
    }
}

struct TransposeOp;

impl<T: Scalar> BackwardOp<T> for TransposeOp {
    fn backward(
        &self,
        grad: &Tensor<T>,
        _out: &Tensor<T>,
        _parents: &[Var<T>],
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        vec![Some(transpose(grad))]
    }
}

fn transpose<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let [r, c] = x.shape()[..] else {
        panic!("transpose expects a matrix, got {:?}", x.shape())
    };
    let src = x.data();
    let mut out = Vec::with_capacity(r * c);
    for j in 0..c {
        for i in 0..r {
            out.push(src[i * c + j]);
        }
    }
    Tensor::new(&[c, r], out)
}

/// Channel-wise maximum or mean of a `[C, H, W]` map, producing `[1, H, W]`.
struct ChannelReduceOp {
    argmax: Option<Vec<usize>>,
}

impl<T: Scalar> BackwardOp<T> for ChannelReduceOp {
    fn backward(
        &self,
        grad: &Tensor<T>,
        _out: &Tensor<T>,
        parents: &[Var<T>],
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let shape = parents[0].shape();
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let hw = h * w;
        let g = grad.data();
        let mut d = vec![T::zero(); c * hw];
        match &self.argmax {
            Some(idx) => {
                for (p, &ch) in idx.iter().enumerate() {
                    d[ch * hw + p] = g[p];
                }
            }
            None => {
                let inv = T::one() / T::lit(c as f64);
                for ch in 0..c {
                    for p in 0..hw {
                        d[ch * hw + p] = g[p] * inv;
                    }
                }
            }
        }
        vec![Some(Tensor::new(shape, d))]
    }
}

/// `x[C,H,W] * a[1,H,W]` broadcasting over channels.
struct SpatialGateOp;

impl<T: Scalar> BackwardOp<T> for SpatialGateOp {
    fn backward(
        &self,
        grad: &Tensor<T>,
        _out: &Tensor<T>,
        parents: &[Var<T>],
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let x = parents[0].value();
        let a = parents[1].value();
        let (c, h, w) = x.chw();
        let hw = h * w;
        let g = grad.data();
        let dx = needs[0].then(|| {
            let mut d = vec![T::zero(); c * hw];
            for ch in 0..c {
                for p in 0..hw {
                    d[ch * hw + p] = g[ch * hw + p] * a.data()[p];
                }
            }
            Tensor::new(x.shape(), d)
        });
        let da = needs[1].then(|| {
            let mut d = vec![T::zero(); hw];
            for ch in 0..c {
                for p in 0..hw {
                    d[p] += g[ch * hw + p] * x.data()[ch * hw + p];
                }
            }
            Tensor::new(a.shape(), d)
        });
        vec![dx, da]
    }
}

impl<T: Scalar> Var<T> {
    fn unary(&self, kind: Unary, f: impl Fn(T) -> T) -> Self {
        Var::from_op(self.value().map(f), vec![self.clone()], UnaryOp(kind))
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&self) -> Self {
        self.unary(Unary::Silu, |x| x * sigmoid(x))
    }

    pub fn sigmoid(&self) -> Self {
        self.unary(Unary::Sigmoid, sigmoid)
    }

    pub fn softplus(&self) -> Self {
        self.unary(Unary::Softplus, softplus)
    }

    pub fn exp(&self) -> Self {
        self.unary(Unary::Exp, T::exp)
    }

    pub fn square(&self) -> Self {
        self.unary(Unary::Square, |x| x * x)
    }

    pub fn add(&self, other: &Self) -> Self {
        let v = self.value().zip_map(other.value(), |a, b| a + b);
        Var::from_op(v, vec![self.clone(), other.clone()], BinaryOp(Binary::Add))
    }

    pub fn sub(&self, other: &Self) -> Self {
        let v = self.value().zip_map(other.value(), |a, b| a - b);
        Var::from_op(v, vec![self.clone(), other.clone()], BinaryOp(Binary::Sub))
    }

    pub fn mul(&self, other: &Self) -> Self {
        let v = self.value().zip_map(other.value(), |a, b| a * b);
        Var::from_op(v, vec![self.clone(), other.clone()], BinaryOp(Binary::Mul))
    }

    pub fn scale(&self, s: T) -> Self {
        Var::from_op(self.value().map(|x| x * s), vec![self.clone()], ScaleOp(s))
    }

    pub fn reshape(&self, shape: &[usize]) -> Self {
        let v = self.value().clone().reshaped(shape);
        Var::from_op(v, vec![self.clone()], ReshapeOp)
    }

    pub fn flatten(&self) -> Self {
        self.reshape(&[self.value().len()])
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(parts: &[Var<T>], axis: usize) -> Self {
        assert!(!parts.is_empty(), "concat of nothing");
        let mut shape = parts[0].shape().to_vec();
        for p in &parts[1..] {
            let s = p.shape();
            assert_eq!(s.len(), shape.len(), "concat rank mismatch");
            for (d, (&a, &b)) in s.iter().zip(&shape).enumerate() {
                assert!(d == axis || a == b, "concat shape mismatch {s:?} vs {shape:?}");
            }
        }
        shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
        let (outer, total, inner) = axis_split(&shape, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let len = p.shape()[axis] * inner;
                data.extend_from_slice(&p.value().data()[o * len..(o + 1) * len]);
            }
        }
        Var::from_op(Tensor::new(&shape, data), parts.to_vec(), ConcatOp { axis })
    }

    /// Slice `start..start+len` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Self {
        let shape = self.shape();
        assert!(start + len <= shape[axis], "narrow out of range");
        let (outer, total, inner) = axis_split(shape, axis);
        let src = self.value().data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * total + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        Var::from_op(Tensor::new(&out_shape, data), vec![self.clone()], NarrowOp { axis, start })
    }

    /// Matrix transpose of a `[R, C]` node.
    pub fn t(&self) -> Self {
        Var::from_op(transpose(self.value()), vec![self.clone()], TransposeOp)
    }

    pub fn sum(&self) -> Self {
        Var::from_op(Tensor::scalar(self.value().sum()), vec![self.clone()], SumOp)
    }

    pub fn mean(&self) -> Self {
        let n = self.value().len().max(1);
        self.sum().scale(T::one() / T::lit(n as f64))
    }

    /// Sum of scalar nodes; an empty slice yields a constant zero.
    pub fn add_all(terms: &[Var<T>]) -> Self {
        let mut it = terms.iter();
        match it.next() {
            None => Var::constant(Tensor::scalar(T::zero())),
            Some(first) => it.fold(first.clone(), |acc, t| acc.add(t)),
        }
    }

    /// Row-batched affine map: `self: [N, in]`, `weight: [out, in]`, `bias: [out]`.
    pub fn linear(&self, weight: &Var<T>, bias: Option<&Var<T>>) -> Self {
        let (n, din) = match self.shape()[..] {
            [n, d] => (n, d),
            _ => panic!("linear expects [N, in], got {:?}", self.shape()),
        };
        let dout = weight.shape()[0];
        assert_eq!(weight.shape(), [dout, din], "linear weight shape");
        let mut y = vec![T::zero(); n * dout];
        if let Some(b) = bias {
            assert_eq!(b.shape(), [dout]);
            for row in y.chunks_exact_mut(dout) {
                row.copy_from_slice(b.value().data());
            }
        }
        T::gemm(
            n,
            din,
            dout,
            T::one(),
            self.value().data(),
            din as isize,
            1,
            weight.value().data(),
            1,
            din as isize,
            T::one(),
            &mut y,
            dout as isize,
            1,
        );
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Var::from_op(Tensor::new(&[n, dout], y), parents, LinearOp)
    }

    /// Rows of a `[N, D]` matrix selected (with repetition) by `index`.
    pub fn gather_rows(&self, index: &[usize]) -> Self {
        let [n, d] = self.shape()[..] else {
            panic!("gather_rows expects [N, D], got {:?}", self.shape())
        };
        let src = self.value().data();
        let mut data = Vec::with_capacity(index.len() * d);
        for &i in index {
            assert!(i < n, "gather index {i} out of range {n}");
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        Var::from_op(
            Tensor::new(&[index.len(), d], data),
            vec![self.clone()],
            GatherRowsOp {
                index: index.to_vec(),
            },
        )
    }

    /// Sums rows of `[E, D]` into `segments` buckets; row `e` goes to `segment[e]`.
    /// Buckets that receive no row are zero.
    pub fn segment_sum(&self, segment: &[usize], segments: usize) -> Self {
        let [e, d] = self.shape()[..] else {
            panic!("segment_sum expects [E, D], got {:?}", self.shape())
        };
        assert_eq!(segment.len(), e);
        let src = self.value().data();
        let mut data = vec![T::zero(); segments * d];
        for (row, &s) in src.chunks_exact(d.max(1)).zip(segment) {
            for (acc, &v) in data[s * d..(s + 1) * d].iter_mut().zip(row) {
                *acc += v;
            }
        }
        Var::from_op(
            Tensor::new(&[segments, d], data),
            vec![self.clone()],
            SegmentSumOp {
                segment: segment.to_vec(),
            },
        )
    }

    pub fn channel_max(&self) -> Self {
        let (c, h, w) = self.value().chw();
        let hw = h * w;
        let x = self.value().data();
        let mut vals = vec![T::neg_infinity(); hw];
        let mut idx = vec![0usize; hw];
        for ch in 0..c {
            for p in 0..hw {
                let v = x[ch * hw + p];
                if v > vals[p] {
                    vals[p] = v;
                    idx[p] = ch;
                }
            }
        }
        Var::from_op(
            Tensor::new(&[1, h, w], vals),
            vec![self.clone()],
            ChannelReduceOp { argmax: Some(idx) },
        )
    }

    pub fn channel_mean(&self) -> Self {
        let (c, h, w) = self.value().chw();
        let hw = h * w;
        let x = self.value().data();
        let mut vals = vec![T::zero(); hw];
        for ch in 0..c {
            for p in 0..hw {
                vals[p] += x[ch * hw + p];
            }
        }
        let inv = T::one() / T::lit(c as f64);
        vals.iter_mut().for_each(|v| *v *= inv);
        Var::from_op(
            Tensor::new(&[1, h, w], vals),
            vec![self.clone()],
            ChannelReduceOp { argmax: None },
        )
    }

    /// Multiplies every channel of `self: [C,H,W]` by `gate: [1,H,W]`.
    pub fn spatial_gate(&self, gate: &Var<T>) -> Self {
        let (c, h, w) = self.value().chw();
        assert_eq!(gate.shape(), [1, h, w], "gate shape");
        let hw = h * w;
        let x = self.value().data();
        let a = gate.value().data();
        let mut out = vec![T::zero(); c * hw];
        for ch in 0..c {
            for p in 0..hw {
                out[ch * hw + p] = x[ch * hw + p] * a[p];
            }
        }
        Var::from_op(
            Tensor::new(self.shape(), out),
            vec![self.clone(), gate.clone()],
            SpatialGateOp,
        )
    }
}
