//! Fused loss kernels with closed-form gradients.

use super::ops::{sigmoid, softplus};
use super::{BackwardOp, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

struct FocalOp<T> {
    /// 1 where the class is the target, 0 otherwise; same layout as logits.
    onehot: Vec<bool>,
    alpha: T,
    gamma: T,
}

impl<T: Scalar> BackwardOp<T> for FocalOp<T> {
    fn backward(
        &self,
        grad: &Tensor<T>,
        _out: &Tensor<T>,
        parents: &[Var<T>],
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let g = grad.data()[0];
        let (a, gm) = (self.alpha, self.gamma);
        let one = T::one();
        let x = parents[0].value();
        let d = x
            .data()
            .iter()
            .zip(&self.onehot)
            .map(|(&x, &pos)| {
                let p = sigmoid(x);
                let d = if pos {
                    let log_p = -softplus(-x);
                    a * gm * (one - p).powf(gm) * p * log_p - a * (one - p).powf(gm + one)
                } else {
                    let log_q = -softplus(x);
                    (one - a) * p.powf(gm) * (p - gm * (one - p) * log_q)
                };
                d * g
            })
            .collect();
        vec![Some(Tensor::new(x.shape(), d))]
    }
}

struct BceOp {
    targets: Vec<f64>,
}

impl<T: Scalar> BackwardOp<T> for BceOp {
    fn backward(
        &self,
        grad: &Tensor<T>,
        _out: &Tensor<T>,
        parents: &[Var<T>],
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let g = grad.data()[0];
        let x = parents[0].value();
        let d = x
            .data()
            .iter()
            .zip(&self.targets)
            .map(|(&x, &y)| g * (sigmoid(x) - T::lit(y)))
            .collect();
        vec![Some(Tensor::new(x.shape(), d))]
    }
}

struct IouOp {
    targets: Vec<[f64; 4]>,
}

struct IouTerms<T> {
    inter: T,
    union: T,
    /// Whether prediction side is the minimum in each of l, t, r, b.
    pred_is_min: [bool; 4],
    wi: T,
    hi: T,
}

fn iou_terms<T: Scalar>(p: &[T], t: &[f64; 4]) -> IouTerms<T> {
    let tt: [T; 4] = [T::lit(t[0]), T::lit(t[1]), T::lit(t[2]), T::lit(t[3])];
    let pred_area = (p[0] + p[2]) * (p[1] + p[3]);
    let tgt_area = (tt[0] + tt[2]) * (tt[1] + tt[3]);
    let pred_is_min = [p[0] <= tt[0], p[1] <= tt[1], p[2] <= tt[2], p[3] <= tt[3]];
    let wi = p[0].min(tt[0]) + p[2].min(tt[2]);
    let hi = p[1].min(tt[1]) + p[3].min(tt[3]);
    let inter = wi * hi;
    IouTerms {
        inter,
        union: pred_area + tgt_area - inter,
        pred_is_min,
        wi,
        hi,
    }
}

impl<T: Scalar> BackwardOp<T> for IouOp {
    fn backward(
        &self,
        grad: &Tensor<T>,
        _out: &Tensor<T>,
        parents: &[Var<T>],
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let g = grad.data()[0];
        let one = T::one();
        let x = parents[0].value();
        let mut d = Vec::with_capacity(x.len());
        for (p, t) in x.data().chunks_exact(4).zip(&self.targets) {
            let k = iou_terms(p, t);
            // loss = ln(union + 1) - ln(inter + 1), union = ap + at - inter
            let d_union = one / (k.union + one);
            let d_inter = -one / (k.inter + one) - d_union;
            let dw = p[1] + p[3]; // d(pred_area)/dl and /dr
            let dh = p[0] + p[2]; // d(pred_area)/dt and /db
            let di = [
                if k.pred_is_min[0] { k.hi } else { T::zero() },
                if k.pred_is_min[1] { k.wi } else { T::zero() },
                if k.pred_is_min[2] { k.hi } else { T::zero() },
                if k.pred_is_min[3] { k.wi } else { T::zero() },
            ];
            let da = [dw, dh, dw, dh];
            for c in 0..4 {
                d.push(g * (d_union * da[c] + d_inter * di[c]));
            }
        }
        vec![Some(Tensor::new(x.shape(), d))]
    }
}

impl<T: Scalar> Var<T> {
    /// Sigmoid focal loss summed over every element of `self`.
    ///
    /// `positive[i]` marks the elements whose binary target is 1.
    pub fn focal_loss_sum(&self, positive: &[bool], alpha: f64, gamma: f64) -> Self {
        assert_eq!(positive.len(), self.value().len(), "focal target length");
        let (a, gm) = (T::lit(alpha), T::lit(gamma));
        let one = T::one();
        let total: T = self
            .value()
            .data()
            .iter()
            .zip(positive)
            .map(|(&x, &pos)| {
                let p = sigmoid(x);
                if pos {
                    a * (one - p).powf(gm) * softplus(-x)
                } else {
                    (one - a) * p.powf(gm) * softplus(x)
                }
            })
            .sum();
        Var::from_op(
            Tensor::scalar(total),
            vec![self.clone()],
            FocalOp {
                onehot: positive.to_vec(),
                alpha: a,
                gamma: gm,
            },
        )
    }

    /// Binary cross-entropy on logits against (possibly soft) targets, summed.
    pub fn bce_with_logits_sum(&self, targets: &[f64]) -> Self {
        assert_eq!(targets.len(), self.value().len(), "bce target length");
        let total: T = self
            .value()
            .data()
            .iter()
            .zip(targets)
            .map(|(&x, &y)| softplus(x) - x * T::lit(y))
            .sum();
        Var::from_op(
            Tensor::scalar(total),
            vec![self.clone()],
            BceOp {
                targets: targets.to_vec(),
            },
        )
    }

    /// IoU loss `-ln((I + 1) / (U + 1))` summed over rows of `self: [N, 4]`
    /// holding (l, t, r, b) distances from a shared anchor point.
    pub fn iou_loss_sum(&self, targets: &[[f64; 4]]) -> Self {
        assert_eq!(self.shape(), [targets.len(), 4], "iou loss shape");
        let one = T::one();
        let total: T = self
            .value()
            .data()
            .chunks_exact(4)
            .zip(targets)
            .map(|(p, t)| {
                let k = iou_terms(p, t);
                (k.union + one).ln() - (k.inter + one).ln()
            })
            .sum();
        Var::from_op(
            Tensor::scalar(total),
            vec![self.clone()],
            IouOp {
                targets: targets.to_vec(),
            },
        )
    }
}
