//! Latent object states and one step of cross-frame message passing.
//!
//! RoI features are encoded into states `z`. Every frame-t node is joined to
//! every frame-t+1 node by an edge whose embedding `e = f_e(z_t, z_t1)` is
//! summed into its frame-t+1 endpoint. That endpoint then predicts its
//! transition `dz = f_n(z_t1, sum e)`, and each edge gets a sigmoid score.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::nn::{Conv2d, ConvSpec, Init, Mlp, ParamStore};
use crate::scalar::Scalar;
use crate::synthdata::GtInstance;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    /// Latent state dimension D.
    pub latent_dim: usize,
    /// Edge embedding dimension E.
    pub edge_dim: usize,
    pub hidden_dim: usize,
    pub encoder_channels: usize,
    /// Shape of the incoming RoI features `[C, R, R]`.
    pub roi_channels: usize,
    pub roi_size: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            latent_dim: 64,
            edge_dim: 64,
            hidden_dim: 64,
            encoder_channels: 32,
            roi_channels: 32,
            roi_size: 14,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeSource {
    GroundTruth { track_id: u32 },
    Proposal { index: usize },
}

#[derive(Clone, Debug)]
pub struct ObjectState<T: Scalar> {
    /// `[1, D]`.
    pub z: Var<T>,
    pub source: NodeSource,
    pub frame: usize,
}

/// Bipartite graph between two frames. Edge `e = i * n_t1 + j` joins
/// frame-t node `i` to frame-t+1 node `j`.
#[derive(Clone, Debug)]
pub struct TransitionGraph<T: Scalar> {
    pub frame_t_nodes: Vec<ObjectState<T>>,
    pub frame_t1_nodes: Vec<ObjectState<T>>,
    /// `[n_edges, E]` once message passing ran.
    pub edge_embeddings: Option<Var<T>>,
    /// `[n_t1, D]` once message passing ran.
    pub delta: Option<Var<T>>,
}

impl<T: Scalar> TransitionGraph<T> {
    pub fn num_edges(&self) -> usize {
        self.frame_t_nodes.len() * self.frame_t1_nodes.len()
    }

    pub fn edge_index(&self, i: usize, j: usize) -> usize {
        i * self.frame_t1_nodes.len() + j
    }

    fn stack(nodes: &[ObjectState<T>], dim: usize) -> Var<T> {
        if nodes.is_empty() {
            Var::constant(Tensor::zeros(&[0, dim]))
        } else {
            let rows: Vec<Var<T>> = nodes.iter().map(|n| n.z.clone()).collect();
            Var::concat(&rows, 0)
        }
    }
}

/// Edge logits and probabilities, both `[n_edges]` in edge order.
#[derive(Clone, Debug)]
pub struct EdgeScores<T: Scalar> {
    pub logits: Var<T>,
    pub probs: Vec<f64>,
}

impl<T: Scalar> EdgeScores<T> {
    pub fn get(&self, graph: &TransitionGraph<T>, i: usize, j: usize) -> f64 {
        self.probs[graph.edge_index(i, j)]
    }
}

#[derive(Clone, Debug)]
pub struct ObjectGraph {
    pub config: GraphConfig,
    conv1: Conv2d,
    conv2: Conv2d,
    encoder_mlp: Mlp,
    f_e: Mlp,
    f_n: Mlp,
    score: Mlp,
}

fn conv_out(n: usize) -> usize {
    (n + 2 - 3) / 2 + 1
}

impl ObjectGraph {
    /// The score head's last layer starts at zero, so fresh scores are 0.5.
    pub fn new<T: Scalar>(ps: &mut ParamStore<T>, config: GraphConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let c = &config;
        if c.latent_dim == 0 || c.edge_dim == 0 || c.hidden_dim == 0 || c.encoder_channels == 0 {
            return Err(Error::validation("gnn", "dimensions must be positive"));
        }
        let ce = c.encoder_channels;
        let s = conv_out(conv_out(c.roi_size));
        let fan = Init::Fan { gain: 1.0 };
        let g = "object_graph";
        Ok(Self {
            conv1: Conv2d::new(ps, &format!("{g}/encoder/conv1"), ConvSpec::new(c.roi_channels, ce, 3).stride(2), rng),
            conv2: Conv2d::new(ps, &format!("{g}/encoder/conv2"), ConvSpec::new(ce, ce, 3).stride(2), rng),
            encoder_mlp: Mlp::new(ps, &format!("{g}/encoder/mlp"), (ce * s * s, c.hidden_dim, c.latent_dim), fan, rng),
            f_e: Mlp::new(ps, &format!("{g}/f_e"), (2 * c.latent_dim, c.hidden_dim, c.edge_dim), fan, rng),
            f_n: Mlp::new(ps, &format!("{g}/f_n"), (c.latent_dim + c.edge_dim, c.hidden_dim, c.latent_dim), fan, rng),
            score: Mlp::new(ps, &format!("{g}/score"), (c.edge_dim, c.hidden_dim, 1), Init::Zeros, rng),
            config,
        })
    }

    /// `[C, R, R]` RoI feature to a `[1, D]` state.
    pub fn encode_object<T: Scalar>(&self, ps: &ParamStore<T>, roi: &Var<T>) -> Result<Var<T>> {
        let c = &self.config;
        if roi.shape() != [c.roi_channels, c.roi_size, c.roi_size] {
            return Err(Error::Shape(format!(
                "RoI feature {:?}, expected [{}, {}, {}]",
                roi.shape(),
                c.roi_channels,
                c.roi_size,
                c.roi_size
            )));
        }
        let x = self.conv1.forward(ps, roi).silu();
        let x = self.conv2.forward(ps, &x).silu();
        let n = x.value().len();
        Ok(self.encoder_mlp.forward(ps, &x.reshape(&[1, n])))
    }

    pub fn state<T: Scalar>(&self, ps: &ParamStore<T>, roi: &Var<T>, source: NodeSource, frame: usize) -> Result<ObjectState<T>> {
        Ok(ObjectState {
            z: self.encode_object(ps, roi)?,
            source,
            frame,
        })
    }

    /// Computes edge embeddings and frame-t+1 transitions in place.
    pub fn message_pass<T: Scalar>(&self, ps: &ParamStore<T>, g: &mut TransitionGraph<T>) {
        let (d, e) = (self.config.latent_dim, self.config.edge_dim);
        let (nt, n1) = (g.frame_t_nodes.len(), g.frame_t1_nodes.len());
        let z1 = TransitionGraph::stack(&g.frame_t1_nodes, d);
        let (edges, agg) = if nt * n1 == 0 {
            (Var::constant(Tensor::zeros(&[0, e])), Var::constant(Tensor::zeros(&[n1, e])))
        } else {
            let zt = TransitionGraph::stack(&g.frame_t_nodes, d);
            let src: Vec<usize> = (0..nt * n1).map(|k| k / n1).collect();
            let dst: Vec<usize> = (0..nt * n1).map(|k| k % n1).collect();
            let pairs = Var::concat(&[zt.gather_rows(&src), z1.gather_rows(&dst)], 1);
            let edges = self.f_e.forward(ps, &pairs);
            let agg = edges.segment_sum(&dst, n1);
            (edges, agg)
        };
        g.delta = Some(if n1 == 0 {
            Var::constant(Tensor::zeros(&[0, d]))
        } else {
            self.f_n.forward(ps, &Var::concat(&[z1, agg], 1))
        });
        g.edge_embeddings = Some(edges);
    }

    /// Sigmoid edge scores; runs message passing first if needed.
    pub fn score_edges<T: Scalar>(&self, ps: &ParamStore<T>, g: &mut TransitionGraph<T>) -> EdgeScores<T> {
        if g.edge_embeddings.is_none() {
            self.message_pass(ps, g);
        }
        let edges = g.edge_embeddings.as_ref().expect("message passing ran");
        let n = g.num_edges();
        let logits = if n == 0 {
            Var::constant(Tensor::zeros(&[0]))
        } else {
            self.score.forward(ps, edges).reshape(&[n])
        };
        let probs = logits.value().data().iter().map(|&x| crate::autodiff::ops::sigmoid(x.as_f64())).collect();
        EdgeScores { logits, probs }
    }
}

/// All cross-frame pairs between the two node lists, not yet populated.
pub fn build_graph<T: Scalar>(states_t: Vec<ObjectState<T>>, states_t1: Vec<ObjectState<T>>) -> TransitionGraph<T> {
    TransitionGraph {
        frame_t_nodes: states_t,
        frame_t1_nodes: states_t1,
        edge_embeddings: None,
        delta: None,
    }
}

/// `z_t + dz`.
pub fn predict_transition<T: Scalar>(z_t: &Var<T>, delta: &Var<T>) -> Var<T> {
    z_t.add(delta)
}

/// Edge labels for frame-t ground-truth nodes (by track id) against frame-t+1
/// proposal boxes. Each proposal is matched to the frame-t+1 object with the
/// highest box IoU if that IoU reaches `iou_threshold`.
pub fn association_targets(
    frame_t_tracks: &[u32],
    proposals_t1: &[BBox],
    gt_t1: &[GtInstance],
    iou_threshold: f64,
) -> Vec<bool> {
    let matched: Vec<Option<u32>> = proposals_t1.iter().map(|p| match_proposal(p, gt_t1, iou_threshold)).collect();
    let mut labels = Vec::with_capacity(frame_t_tracks.len() * proposals_t1.len());
    for &track in frame_t_tracks {
        for m in &matched {
            labels.push(*m == Some(track));
        }
    }
    labels
}

/// Track id of the best-overlapping object, ties to the earlier object.
pub fn match_proposal(proposal: &BBox, gt: &[GtInstance], iou_threshold: f64) -> Option<u32> {
    let mut best: Option<(f64, u32)> = None;
    for g in gt {
        let iou = proposal.iou(&g.bbox);
        if iou >= iou_threshold && best.is_none_or(|(b, _)| iou > b) {
            best = Some((iou, g.track_id));
        }
    }
    best.map(|(_, t)| t)
}

/// Mean binary cross-entropy of edge logits against labels; 0 without edges.
pub fn association_loss<T: Scalar>(logits: &Var<T>, labels: &[bool]) -> Var<T> {
    let n = logits.value().len();
    assert_eq!(n, labels.len(), "one label per edge");
    if n == 0 {
        return Var::constant(Tensor::scalar(T::zero()));
    }
    let targets: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
    logits.bce_with_logits_sum(&targets).scale(T::one() / T::lit(n as f64))
}

/// Mean squared error over every pair and dimension between predicted and
/// encoded next states (`[P, D]` each); 0 without pairs.
pub fn transition_consistency_loss<T: Scalar>(predicted: &Var<T>, encoded: &Var<T>) -> Var<T> {
    assert_eq!(predicted.shape(), encoded.shape(), "consistency shapes");
    let n = predicted.value().len();
    if n == 0 {
        return Var::constant(Tensor::scalar(T::zero()));
    }
    predicted.sub(encoded).square().sum().scale(T::one() / T::lit(n as f64))
}

/// Predicted and encoded next states for every positive edge of `g`.
pub fn positive_pairs<T: Scalar>(g: &TransitionGraph<T>, labels: &[bool]) -> Option<(Var<T>, Var<T>)> {
    let delta = g.delta.as_ref()?;
    let n1 = g.frame_t1_nodes.len();
    let mut pred = Vec::new();
    let mut target = Vec::new();
    for (e, _) in labels.iter().enumerate().filter(|(_, &l)| l) {
        let (i, j) = (e / n1, e % n1);
        pred.push(predict_transition(&g.frame_t_nodes[i].z, &delta.narrow(0, j, 1)));
        target.push(g.frame_t1_nodes[j].z.clone());
    }
    if pred.is_empty() {
        return None;
    }
    Some((Var::concat(&pred, 0), Var::concat(&target, 0)))
}

#[cfg(test)]
mod tests;
