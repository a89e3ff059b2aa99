use rand::{Rng, SeedableRng};

use super::*;
use crate::testutil::{param_grad_check, random_tensor};

fn small_config() -> GraphConfig {
    GraphConfig {
        latent_dim: 5,
        edge_dim: 4,
        hidden_dim: 6,
        encoder_channels: 3,
        roi_channels: 2,
        roi_size: 6,
    }
}

/// A graph with every parameter randomized, including the zero-init heads.
fn randomized(cfg: GraphConfig, seed: u64) -> (ParamStore<f64>, ObjectGraph) {
    let mut ps = ParamStore::new();
    let g = ObjectGraph::new(&mut ps, cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    for (k, (id, _, v)) in ps.clone().iter().enumerate() {
        let shape = v.shape().to_vec();
        ps.set(id, random_tensor(&shape, 0.5, seed * 1000 + k as u64));
    }
    (ps, g)
}

fn states(n: usize, d: usize, frame: usize, seed: u64) -> Vec<ObjectState<f64>> {
    (0..n)
        .map(|i| ObjectState {
            z: Var::constant(random_tensor(&[1, d], 1.0, seed * 100 + i as u64)),
            source: NodeSource::Proposal { index: i },
            frame,
        })
        .collect()
}

fn row(v: &Var<f64>, r: usize) -> Vec<f64> {
    let cols = v.shape()[1];
    v.value().data()[r * cols..(r + 1) * cols].to_vec()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn encoder_yields_latent_row_deterministically() {
    let cfg = GraphConfig::default();
    let mut ps = ParamStore::<f64>::new();
    let g = ObjectGraph::new(&mut ps, cfg.clone(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let roi = Var::constant(random_tensor(&[cfg.roi_channels, cfg.roi_size, cfg.roi_size], 1.0, 1));
    let a = g.encode_object(&ps, &roi).unwrap();
    let b = g.encode_object(&ps, &roi).unwrap();
    assert_eq!(a.shape(), [1, 64]);
    assert_eq!(a.value(), b.value());
    let bad = Var::constant(random_tensor(&[cfg.roi_channels, 7, 7], 1.0, 1));
    assert!(matches!(g.encode_object(&ps, &bad), Err(Error::Shape(_))));
}

#[test]
fn zero_dimensions_are_rejected() {
    let mut ps = ParamStore::<f64>::new();
    let cfg = GraphConfig {
        latent_dim: 0,
        ..GraphConfig::default()
    };
    let err = ObjectGraph::new(&mut ps, cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
    assert!(err.is_validation());
}

#[test]
fn graph_is_complete_bipartite() {
    let g = build_graph(states(2, 3, 0, 1), states(3, 3, 1, 2));
    assert_eq!(g.num_edges(), 6);
    assert_eq!(g.edge_index(1, 2), 5);
    assert_eq!(build_graph(states(0, 3, 0, 1), states(3, 3, 1, 2)).num_edges(), 0);
    assert_eq!(build_graph(states(1, 3, 0, 1), states(1, 3, 1, 2)).num_edges(), 1);
}

#[test]
fn isolated_node_sees_an_empty_message_sum() {
    let cfg = small_config();
    let (ps, og) = randomized(cfg.clone(), 4);
    let t1 = states(2, cfg.latent_dim, 1, 5);
    let mut g = build_graph(Vec::new(), t1.clone());
    og.message_pass(&ps, &mut g);
    assert_eq!(g.edge_embeddings.as_ref().unwrap().shape(), [0, cfg.edge_dim]);
    let delta = g.delta.clone().unwrap();
    for (j, node) in t1.iter().enumerate() {
        let zero = Var::constant(Tensor::zeros(&[1, cfg.edge_dim]));
        let expect = og.f_n.forward(&ps, &Var::concat(&[node.z.clone(), zero], 1));
        assert_eq!(row(&delta, j), expect.value().data());
    }
    let scores = og.score_edges(&ps, &mut g);
    assert!(scores.probs.is_empty());
}

#[test]
fn message_passing_matches_explicit_loops() {
    let cfg = small_config();
    let (ps, og) = randomized(cfg.clone(), 6);
    let (d, e) = (cfg.latent_dim, cfg.edge_dim);
    let mut g = build_graph(states(2, d, 0, 7), states(2, d, 1, 8));
    let scores = og.score_edges(&ps, &mut g);

    let silu = |x: f64| x / (1.0 + (-x).exp());
    let dense = |name: &str, x: &[f64]| -> Vec<f64> {
        let w = ps.get(&format!("object_graph/{name}/weight")).unwrap().value().clone();
        let b = ps.get(&format!("object_graph/{name}/bias")).unwrap().value().clone();
        let (rows, cols) = (w.shape()[0], w.shape()[1]);
        (0..rows)
            .map(|r| b.data()[r] + (0..cols).map(|c| w.data()[r * cols + c] * x[c]).sum::<f64>())
            .collect()
    };
    let mlp = |name: &str, x: &[f64]| -> Vec<f64> {
        let h: Vec<f64> = dense(&format!("{name}/fc1"), x).into_iter().map(silu).collect();
        dense(&format!("{name}/fc2"), &h)
    };
    let z = |n: &ObjectState<f64>| n.z.value().data().to_vec();
    let edges = g.edge_embeddings.clone().unwrap();
    let delta = g.delta.clone().unwrap();
    for j in 0..2 {
        let mut sum = vec![0.0; e];
        for i in 0..2 {
            let input = [z(&g.frame_t_nodes[i]), z(&g.frame_t1_nodes[j])].concat();
            let emb = mlp("f_e", &input);
            assert!(max_diff(&emb, &row(&edges, g.edge_index(i, j))) < 1e-12);
            let logit = mlp("score", &emb)[0];
            assert!((1.0 / (1.0 + (-logit).exp()) - scores.get(&g, i, j)).abs() < 1e-12);
            for (s, v) in sum.iter_mut().zip(&emb) {
                *s += v;
            }
        }
        let expect = mlp("f_n", &[z(&g.frame_t1_nodes[j]), sum].concat());
        assert!(max_diff(&expect, &row(&delta, j)) < 1e-12);
    }
}

#[test]
fn message_passing_is_permutation_equivariant() {
    let cfg = small_config();
    let (ps, og) = randomized(cfg.clone(), 9);
    let d = cfg.latent_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for trial in 0..100u64 {
        let (nt, n1) = (rng.gen_range(0..=5), rng.gen_range(1..=5));
        let (a, b) = (states(nt, d, 0, 2 * trial), states(n1, d, 1, 2 * trial + 1));
        let mut pt: Vec<usize> = (0..nt).collect();
        let mut p1: Vec<usize> = (0..n1).collect();
        rand::seq::SliceRandom::shuffle(pt.as_mut_slice(), &mut rng);
        rand::seq::SliceRandom::shuffle(p1.as_mut_slice(), &mut rng);
        let mut g = build_graph(a.clone(), b.clone());
        let mut h = build_graph(pt.iter().map(|&i| a[i].clone()).collect(), p1.iter().map(|&j| b[j].clone()).collect());
        let (sg, sh) = (og.score_edges(&ps, &mut g), og.score_edges(&ps, &mut h));
        let (dg, dh) = (g.delta.unwrap(), h.delta.unwrap());
        for (jj, &j) in p1.iter().enumerate() {
            assert!(max_diff(&row(&dg, j), &row(&dh, jj)) < 1e-6);
            for (ii, &i) in pt.iter().enumerate() {
                assert!((sg.probs[i * n1 + j] - sh.probs[ii * n1 + jj]).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn fresh_score_head_outputs_one_half() {
    let cfg = small_config();
    let mut ps = ParamStore::<f64>::new();
    let og = ObjectGraph::new(&mut ps, cfg.clone(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let mut g = build_graph(states(2, cfg.latent_dim, 0, 1), states(3, cfg.latent_dim, 1, 2));
    let s = og.score_edges(&ps, &mut g);
    assert_eq!(s.probs, vec![0.5; 6]);
}

#[test]
fn transition_adds_delta() {
    let z = Var::constant(Tensor::new(&[1, 2], vec![1.0, 2.0]));
    let dz = Var::constant(Tensor::new(&[1, 2], vec![0.5, -1.0]));
    assert_eq!(predict_transition(&z, &dz).value().data(), [1.5, 1.0]);
}

fn gt(track_id: u32, bbox: BBox) -> GtInstance {
    GtInstance {
        track_id,
        category_id: 1,
        bbox,
    }
}

#[test]
fn association_targets_follow_best_overlap() {
    let objs = [gt(7, BBox::new(0.0, 0.0, 10.0, 10.0)), gt(9, BBox::new(20.0, 20.0, 30.0, 30.0))];
    let perfect = [objs[1].bbox, objs[0].bbox];
    assert_eq!(association_targets(&[7, 9], &perfect, &objs, 0.5), [false, true, true, false]);
    // IoU 1/3 against track 7.
    let weak = [BBox::new(5.0, 0.0, 15.0, 10.0)];
    assert_eq!(association_targets(&[7], &weak, &objs, 0.5), [false]);
    assert_eq!(association_targets(&[7], &weak, &objs, 0.3), [true]);

    // Brute force: every label is (proposal's best gt above threshold) == track.
    let props = [
        BBox::new(1.0, 1.0, 11.0, 11.0),
        BBox::new(8.0, 8.0, 24.0, 24.0),
        BBox::new(21.0, 19.0, 31.0, 29.0),
    ];
    let tracks = [9, 7];
    let labels = association_targets(&tracks, &props, &objs, 0.5);
    for (i, &t) in tracks.iter().enumerate() {
        for (j, p) in props.iter().enumerate() {
            let ious: Vec<f64> = objs.iter().map(|o| o.bbox.iou(p)).collect();
            let best = (0..2).max_by(|&a, &b| ious[a].total_cmp(&ious[b])).unwrap();
            let expect = ious[best] >= 0.5 && objs[best].track_id == t;
            assert_eq!(labels[i * 3 + j], expect, "track {t} proposal {j}");
        }
    }
    assert_eq!(labels, [false, false, true, true, false, false]);
}

#[test]
fn association_loss_reference_values() {
    let zero = Var::constant(Tensor::new(&[4], vec![0.0; 4]));
    let l = association_loss(&zero, &[true, false, true, false]).item();
    assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    let sure = Var::constant(Tensor::new(&[2], vec![40.0, -40.0]));
    assert!(association_loss(&sure, &[true, false]).item() < 1e-12);
    let empty = Var::constant(Tensor::<f64>::zeros(&[0]));
    assert_eq!(association_loss(&empty, &[]).item(), 0.0);
}

#[test]
fn consistency_loss_reference_values() {
    let a = Var::constant(Tensor::<f64>::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]));
    let b = Var::constant(Tensor::new(&[2, 2], vec![0.0, 0.0, 0.0, -1.0]));
    assert!((transition_consistency_loss(&a, &b).item() - 1.25).abs() < 1e-12);
    assert_eq!(transition_consistency_loss(&a, &a).item(), 0.0);
    let e = Var::constant(Tensor::<f64>::zeros(&[0, 3]));
    assert_eq!(transition_consistency_loss(&e, &e).item(), 0.0);
}

#[test]
fn positive_pairs_pick_labelled_edges() {
    let cfg = small_config();
    let (ps, og) = randomized(cfg.clone(), 11);
    let mut g = build_graph(states(2, cfg.latent_dim, 0, 1), states(2, cfg.latent_dim, 1, 2));
    og.message_pass(&ps, &mut g);
    assert!(positive_pairs(&g, &[false; 4]).is_none());
    let (pred, target) = positive_pairs(&g, &[false, true, false, false]).unwrap();
    let delta = g.delta.clone().unwrap();
    let expect: Vec<f64> = g.frame_t_nodes[0].z.value().data().iter().zip(row(&delta, 1)).map(|(a, b)| a + b).collect();
    assert_eq!(pred.value().data(), expect.as_slice());
    assert_eq!(target.value(), g.frame_t1_nodes[1].z.value());
}

fn rois(cfg: &GraphConfig, n: usize, seed: u64) -> Vec<Var<f64>> {
    (0..n)
        .map(|i| Var::constant(random_tensor(&[cfg.roi_channels, cfg.roi_size, cfg.roi_size], 1.0, seed + i as u64)))
        .collect()
}

#[test]
fn encoder_gradients() {
    let cfg = small_config();
    let (ps, og) = randomized(cfg.clone(), 12);
    let roi = rois(&cfg, 1, 5).remove(0);
    let probe = Var::constant(random_tensor(&[1, cfg.latent_dim], 1.0, 6));
    let err = param_grad_check(&ps, "object_graph/encoder", 24, 1, |ps| og.encode_object(ps, &roi).unwrap().mul(&probe).sum());
    assert!(err < 1e-4, "{err}");
}

fn graph_from_rois(og: &ObjectGraph, ps: &ParamStore<f64>, a: &[Var<f64>], b: &[Var<f64>]) -> TransitionGraph<f64> {
    let enc = |rs: &[Var<f64>], frame| {
        rs.iter()
            .enumerate()
            .map(|(i, r)| og.state(ps, r, NodeSource::Proposal { index: i }, frame).unwrap())
            .collect()
    };
    build_graph(enc(a, 0), enc(b, 1))
}

#[test]
fn message_pass_and_score_gradients() {
    let cfg = small_config();
    let (ps, og) = randomized(cfg.clone(), 13);
    let (a, b) = (rois(&cfg, 2, 20), rois(&cfg, 3, 30));
    let probe = Var::constant(random_tensor(&[3, cfg.latent_dim], 1.0, 7));
    let err = param_grad_check(&ps, "object_graph", 24, 2, |ps| {
        let mut g = graph_from_rois(&og, ps, &a, &b);
        og.message_pass(ps, &mut g);
        g.delta.unwrap().mul(&probe).sum().add(&g.edge_embeddings.unwrap().square().sum())
    });
    assert!(err < 1e-4, "message pass {err}");
    let err = param_grad_check(&ps, "object_graph", 24, 3, |ps| {
        let mut g = graph_from_rois(&og, ps, &a, &b);
        og.score_edges(ps, &mut g).logits.silu().sum()
    });
    assert!(err < 1e-4, "scores {err}");
}

#[test]
fn loss_gradients() {
    let cfg = small_config();
    let (ps, og) = randomized(cfg.clone(), 14);
    let (a, b) = (rois(&cfg, 2, 40), rois(&cfg, 2, 50));
    let labels = [true, false, false, true];
    let err = param_grad_check(&ps, "object_graph", 24, 4, |ps| {
        let mut g = graph_from_rois(&og, ps, &a, &b);
        association_loss(&og.score_edges(ps, &mut g).logits, &labels)
    });
    assert!(err < 1e-4, "association {err}");
    let err = param_grad_check(&ps, "object_graph", 24, 5, |ps| {
        let mut g = graph_from_rois(&og, ps, &a, &b);
        og.message_pass(ps, &mut g);
        let (p, t) = positive_pairs(&g, &labels).unwrap();
        transition_consistency_loss(&p, &t)
    });
    assert!(err < 1e-4, "consistency {err}");
}
