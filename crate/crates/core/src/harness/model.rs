use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::Config;
use crate::autodiff::Var;
use crate::error::Result;
use crate::nn::ParamStore;
use crate::object_graph::ObjectGraph;
use crate::perception::{Perception, PyramidFeatures};
use crate::resfuser::ResFuser;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// All trainable modules and their parameters.
///
/// Every module is built whatever the ablation flags say, so a checkpoint
/// always carries the full parameter set and the flags only change which
/// modules the pipeline runs.
#[derive(Clone)]
pub struct Model<T: Scalar> {
    pub config: Config,
    pub params: ParamStore<T>,
    pub perception: Perception,
    pub fuser: ResFuser,
    pub graph: ObjectGraph,
}

/// Independent initialisation stream per module, so building one module
/// never shifts the initial weights of another.
fn module_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl<T: Scalar> Model<T> {
    pub fn new(config: Config) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let perception = Perception::new(&mut params, config.perception.clone(), &mut module_rng(config.seed, 1))?;
        let fuser = ResFuser::new(
            &mut params,
            &config.perception.levels,
            config.perception.channels,
            config.fuser_kernel,
            &mut module_rng(config.seed, 2),
        );
        let graph = ObjectGraph::new(&mut params, config.graph.clone(), &mut module_rng(config.seed, 3))?;
        Ok(Self {
            config,
            params,
            perception,
            fuser,
            graph,
        })
    }

    /// Copy with different ablation flags and tracker settings but the same
    /// weights.
    pub fn with_flags(&self, resfuser_enabled: bool, gnn_enabled: bool) -> Self {
        let mut m = self.clone();
        m.config.resfuser_enabled = resfuser_enabled;
        m.config.gnn_enabled = gnn_enabled;
        m
    }

    /// Raw pyramid of an RGB image `[3, H, W]`.
    pub fn pyramid(&self, ps: &ParamStore<T>, image: &Tensor<T>) -> Result<PyramidFeatures<T>> {
        self.perception.extract_pyramid(ps, &Var::constant(image.clone()))
    }

    /// Temporal fusion of the current raw pyramid with the previous one
    /// (`None` at a clip start). A disabled fuser passes `curr` through.
    pub fn fuse(
        &self,
        ps: &ParamStore<T>,
        prev: Option<&PyramidFeatures<T>>,
        curr: &PyramidFeatures<T>,
    ) -> Result<PyramidFeatures<T>> {
        if !self.config.resfuser_enabled {
            return Ok(curr.clone());
        }
        match prev {
            Some(p) => self.fuser.fuse(ps, p, curr),
            None => self.fuser.fuse_first_frame(ps, curr),
        }
    }

    /// The tracker scores edges with the graph only when it runs.
    pub fn uses_edge_tracker(&self) -> bool {
        self.config.gnn_enabled && self.config.tracker.mode == crate::tracker::TrackerMode::Edge
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn module_streams_are_independent() {
        let a = Model::<f32>::new(Config::default()).unwrap();
        let mut cfg = Config::default();
        cfg.graph.hidden_dim = 16;
        let b = Model::<f32>::new(cfg).unwrap();
        for (_, name, v) in a.params.iter().filter(|(_, n, _)| !n.starts_with("object_graph")) {
            assert_eq!(v.value(), b.params.get(name).unwrap().value(), "{name}");
        }
    }

    #[test]
    fn parameter_names_follow_module_paths() {
        let m = Model::<f32>::new(Config::default()).unwrap();
        for (_, name, _) in m.params.iter() {
            let ok = name.starts_with("perception/")
                || name.starts_with("resfuser/level")
                || name.starts_with("object_graph/");
            assert!(ok, "{name}");
        }
        assert!(m.params.get("resfuser/level3/conv2/weight").is_some());
    }
}
