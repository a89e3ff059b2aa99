use super::{DenseHeadOutput, DenseTargets};
use crate::autodiff::Var;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Mask logits of one RoI for its target category, with soft per-pixel targets.
#[derive(Clone)]
pub struct MaskSample<T: Scalar> {
    pub logits: Var<T>,
    pub target: Vec<f64>,
}

#[derive(Clone)]
pub struct DetectionLosses<T: Scalar> {
    pub cls: Var<T>,
    pub box_loss: Var<T>,
    pub ctr: Var<T>,
    pub mask: Var<T>,
}

fn zero<T: Scalar>() -> Var<T> {
    Var::constant(Tensor::scalar(T::zero()))
}

/// Focal classification loss over every location, IoU box loss and
/// centerness BCE over positives, all divided by the positive count (at
/// least 1), and mask BCE divided by the total RoI pixel count.
pub fn detection_losses<T: Scalar>(
    dense: &DenseHeadOutput<T>,
    targets: &DenseTargets,
    masks: &[MaskSample<T>],
    focal_alpha: f64,
    focal_gamma: f64,
) -> DetectionLosses<T> {
    assert_eq!(dense.levels.len(), targets.levels.len(), "level count");
    let num_pos = targets.num_positive();
    let norm = T::one() / T::lit(num_pos.max(1) as f64);
    let mut cls_terms = Vec::new();
    let mut box_terms = Vec::new();
    let mut ctr_terms = Vec::new();
    for (out, tgt) in dense.levels.iter().zip(&targets.levels) {
        let (k, h, w) = out.cls.value().chw();
        assert_eq!((h, w), (tgt.height, tgt.width), "target geometry");
        let hw = h * w;
        let mut onehot = vec![false; k * hw];
        for (p, c) in tgt.class.iter().enumerate() {
            if let Some(c) = c {
                onehot[c * hw + p] = true;
            }
        }
        cls_terms.push(out.cls.focal_loss_sum(&onehot, focal_alpha, focal_gamma));
        let pos: Vec<usize> = (0..hw).filter(|&p| tgt.positive[p]).collect();
        if pos.is_empty() {
            continue;
        }
        let ltrb = out.ltrb.reshape(&[4, hw]).t().gather_rows(&pos);
        let box_targets: Vec<[f64; 4]> = pos.iter().map(|&p| tgt.ltrb[p]).collect();
        box_terms.push(ltrb.iou_loss_sum(&box_targets));
        let ctr = out.ctr.reshape(&[hw, 1]).gather_rows(&pos);
        let ctr_targets: Vec<f64> = pos.iter().map(|&p| tgt.centerness[p]).collect();
        ctr_terms.push(ctr.bce_with_logits_sum(&ctr_targets));
    }
    let cls = Var::add_all(&cls_terms).scale(norm);
    let (box_loss, ctr) = if num_pos == 0 {
        (zero(), zero())
    } else {
        (Var::add_all(&box_terms).scale(norm), Var::add_all(&ctr_terms).scale(norm))
    };
    let mask = if masks.is_empty() {
        zero()
    } else {
        let pixels: usize = masks.iter().map(|m| m.target.len()).sum();
        let terms: Vec<Var<T>> = masks.iter().map(|m| m.logits.bce_with_logits_sum(&m.target)).collect();
        Var::add_all(&terms).scale(T::one() / T::lit(pixels as f64))
    };
    DetectionLosses {
        cls,
        box_loss,
        ctr,
        mask,
    }
}
