use super::*;
use crate::testutil::{grad_check, random_tensor};

const TOL: f64 = 1e-6;

#[test]
fn elementwise_ops_match_finite_differences() {
    let a = random_tensor(&[2, 3, 4], 2.0, 1);
    let b = random_tensor(&[2, 3, 4], 2.0, 2);
    let err = grad_check(&[a, b], 100, |v| {
        let s = v[0].silu().mul(&v[1].sigmoid());
        let t = v[0].softplus().sub(&v[1].exp().scale(0.3));
        s.add(&t).square().mean()
    });
    assert!(err < TOL, "rel err {err}");
}

#[test]
fn conv2d_matches_finite_differences() {
    for &(stride, pad, k) in &[(1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 0, 1)] {
        let x = random_tensor(&[3, 7, 6], 1.0, 3);
        let w = random_tensor(&[4, 3, k, k], 0.5, 4);
        let b = random_tensor(&[4], 0.5, 5);
        let err = grad_check(&[x, w, b], 60, |v| {
            v[0].conv2d(&v[1], Some(&v[2]), stride, pad).square().sum()
        });
        assert!(err < TOL, "stride {stride} pad {pad} k {k}: rel err {err}");
    }
}

#[test]
fn conv2d_matches_direct_loop() {
    let x = random_tensor(&[2, 5, 5], 1.0, 6);
    let w = random_tensor(&[3, 2, 3, 3], 1.0, 7);
    let y = Var::constant(x.clone()).conv2d(&Var::constant(w.clone()), None, 2, 1);
    assert_eq!(y.shape(), [3, 3, 3]);
    for o in 0..3 {
        for oy in 0..3 {
            for ox in 0..3 {
                let mut acc = 0.0;
                for c in 0..2 {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let iy = (oy * 2 + ky) as isize - 1;
                            let ix = (ox * 2 + kx) as isize - 1;
                            if (0..5).contains(&iy) && (0..5).contains(&ix) {
                                acc += x.data()[(c * 5 + iy as usize) * 5 + ix as usize]
                                    * w.data()[((o * 2 + c) * 3 + ky) * 3 + kx];
                            }
                        }
                    }
                }
                let got = y.value().data()[(o * 3 + oy) * 3 + ox];
                assert!((got - acc).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn shape_ops_match_finite_differences() {
    let a = random_tensor(&[2, 4, 4], 1.0, 8);
    let b = random_tensor(&[3, 4, 4], 1.0, 9);
    let err = grad_check(&[a, b], 100, |v| {
        let c = Var::concat(&[v[0].clone(), v[1].clone()], 0);
        let gate = c.channel_mean().add(&c.channel_max()).sigmoid();
        let u = c.spatial_gate(&gate).upsample2x().narrow(0, 1, 3);
        u.square().mean()
    });
    assert!(err < TOL, "rel err {err}");
}

#[test]
fn graph_ops_match_finite_differences() {
    let x = random_tensor(&[3, 5], 1.0, 10);
    let w = random_tensor(&[4, 10], 1.0, 11);
    let b = random_tensor(&[4], 1.0, 12);
    let err = grad_check(&[x, w, b], 100, |v| {
        let rows = v[0].gather_rows(&[0, 2, 2, 1]);
        let other = v[0].gather_rows(&[1, 1, 0, 2]);
        let pair = Var::concat(&[rows, other], 1);
        let e = pair.linear(&v[1], Some(&v[2])).silu();
        e.segment_sum(&[0, 1, 0, 3], 4).square().sum()
    });
    assert!(err < TOL, "rel err {err}");
}

#[test]
fn roi_align_matches_finite_differences() {
    let x = random_tensor(&[2, 6, 7], 1.0, 13);
    let roi = RoiBox { x1: 0.7, y1: -0.4, x2: 5.2, y2: 4.9 };
    let err = grad_check(&[x], 84, |v| v[0].roi_align(roi, 3, 2).square().sum());
    assert!(err < TOL, "rel err {err}");
}

#[test]
fn losses_match_finite_differences() {
    let logits = random_tensor(&[3, 4], 3.0, 14);
    let positive: Vec<bool> = (0..12).map(|i| i % 5 == 0).collect();
    let err = grad_check(&[logits.clone()], 12, |v| v[0].focal_loss_sum(&positive, 0.25, 2.0));
    assert!(err < TOL, "focal rel err {err}");

    let targets: Vec<f64> = (0..12).map(|i| (i as f64) / 11.0).collect();
    let err = grad_check(&[logits], 12, |v| v[0].bce_with_logits_sum(&targets));
    assert!(err < TOL, "bce rel err {err}");

    let pred = random_tensor(&[3, 4], 1.0, 15).map(|v| 5.0 + 3.0 * v);
    let tgt = [[4.0, 6.5, 3.0, 7.0], [2.0, 2.0, 9.0, 9.0], [5.5, 4.5, 5.0, 6.0]];
    let err = grad_check(&[pred], 12, |v| v[0].iou_loss_sum(&tgt));
    assert!(err < TOL, "iou rel err {err}");
}

#[test]
fn iou_loss_is_zero_at_target() {
    let t = [[3.0, 4.0, 5.0, 6.0]];
    let p = Var::<f64>::constant(Tensor::from_f64(&[1, 4], &t[0]));
    assert_eq!(p.iou_loss_sum(&t).item(), 0.0);
}

#[test]
fn constants_build_no_graph() {
    let a = Var::<f32>::constant(Tensor::zeros(&[2]));
    let b = a.silu().add(&a).sum();
    assert!(!b.requires_grad());
    assert!(b.backward().get(&a).is_none());
}

#[test]
fn shared_parent_accumulates() {
    let a = Var::<f64>::param(Tensor::from_f64(&[1], &[3.0]));
    let y = a.mul(&a).add(&a);
    let g = y.backward();
    assert_eq!(g.get(&a).unwrap().data(), &[7.0]);
}
