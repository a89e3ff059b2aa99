//! Flat `key = value` run configuration.
//!
//! Keys are dotted paths (`tracker.alpha`, `optim.lr`). A TOML document
//! written with `[section]` tables flattens to the same keys. Unknown keys,
//! wrong value types and out-of-range values are validation errors naming
//! the key.

use std::path::Path;

use toml::Value;

use crate::error::{Error, Result};
use crate::object_graph::GraphConfig;
use crate::perception::{default_scale_ranges, PerceptionConfig};
use crate::tracker::{TrackerConfig, TrackerMode};

#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    pub cls: f64,
    pub box_iou: f64,
    pub ctr: f64,
    pub mask: f64,
    pub edge: f64,
    pub trans: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            cls: 1.0,
            box_iou: 1.0,
            ctr: 1.0,
            mask: 1.0,
            edge: 1.0,
            trans: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimConfig {
    pub lr: f64,
    pub momentum: f64,
    pub iterations: usize,
    /// Iterations after which the learning rate drops tenfold; defaults to
    /// 60% and 85% of `iterations`.
    pub milestones: Option<Vec<usize>>,
    pub batch_size: usize,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub grad_clip: f64,
    pub warmup: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 5e-3,
            momentum: 0.9,
            iterations: 5000,
            milestones: None,
            batch_size: 4,
            grad_clip: 10.0,
            warmup: 100,
        }
    }
}

impl OptimConfig {
    pub fn milestones(&self) -> Vec<usize> {
        self.milestones
            .clone()
            .unwrap_or_else(|| vec![self.iterations * 60 / 100, self.iterations * 85 / 100])
    }

    /// Learning rate for 0-based iteration `it`: linear warmup, then step decay.
    pub fn lr_at(&self, it: usize) -> f64 {
        let drops = self.milestones().iter().filter(|&&m| it >= m).count();
        let warm = if it < self.warmup {
            (it + 1) as f64 / self.warmup as f64
        } else {
            1.0
        };
        self.lr * warm * 0.1f64.powi(drops as i32)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Probability that a training pair is an augmented still image.
    pub p_img: f64,
    /// Frame-t+1 proposals added as graph nodes next to the true objects.
    pub max_proposals: usize,
    /// Box IoU at which a proposal counts as a given object.
    pub assoc_iou: f64,
    /// Loss-curve CSV path; empty means `<checkpoint>.loss.csv`.
    pub loss_csv: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            p_img: 0.5,
            max_proposals: 6,
            assoc_iou: 0.5,
            loss_csv: String::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub train_data: String,
    pub val_data: String,
    pub perception: PerceptionConfig,
    pub graph: GraphConfig,
    pub fuser_kernel: usize,
    pub loss: LossWeights,
    pub optim: OptimConfig,
    pub train: TrainConfig,
    pub tracker: TrackerConfig,
    pub resfuser_enabled: bool,
    pub gnn_enabled: bool,
}

impl Default for Config {
    fn default() -> Self {
        let perception = PerceptionConfig::default();
        let graph = GraphConfig {
            roi_channels: perception.channels,
            roi_size: perception.roi_size,
            ..GraphConfig::default()
        };
        Self {
            seed: 0,
            train_data: String::new(),
            val_data: String::new(),
            perception,
            graph,
            fuser_kernel: 3,
            loss: LossWeights::default(),
            optim: OptimConfig::default(),
            train: TrainConfig::default(),
            tracker: TrackerConfig::default(),
            resfuser_enabled: true,
            gnn_enabled: true,
        }
    }
}

/// Every accepted key, in the order they are written.
pub const KEYS: &[&str] = &[
    "seed",
    "data.train",
    "data.val",
    "model.channels",
    "model.levels",
    "model.backbone_widths",
    "model.num_classes",
    "model.roi_size",
    "model.mask_size",
    "model.mask_channels",
    "model.latent_dim",
    "model.edge_dim",
    "model.hidden_dim",
    "model.encoder_channels",
    "model.fuser_kernel",
    "detect.score_threshold",
    "detect.nms_iou",
    "detect.max_detections",
    "loss.cls",
    "loss.box",
    "loss.ctr",
    "loss.mask",
    "loss.edge",
    "loss.trans",
    "loss.focal_alpha",
    "loss.focal_gamma",
    "optim.lr",
    "optim.momentum",
    "optim.iterations",
    "optim.milestones",
    "optim.batch_size",
    "optim.grad_clip",
    "optim.warmup",
    "train.p_img",
    "train.max_proposals",
    "train.assoc_iou",
    "train.loss_csv",
    "tracker.alpha",
    "tracker.beta",
    "tracker.gamma",
    "tracker.theta_new",
    "tracker.epsilon",
    "tracker.theta_iou",
    "tracker.mode",
    "resfuser.enabled",
    "gnn.enabled",
];

fn bad(key: &str, reason: impl Into<String>) -> Error {
    Error::validation(key, reason)
}

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(x) => Ok(*x),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(bad(key, format!("expected a number, got {}", v.type_str()))),
    }
}

fn as_usize(key: &str, v: &Value) -> Result<usize> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        Value::Integer(_) => Err(bad(key, "must be non-negative")),
        _ => Err(bad(key, format!("expected an integer, got {}", v.type_str()))),
    }
}

fn as_bool(key: &str, v: &Value) -> Result<bool> {
    v.as_bool().ok_or_else(|| bad(key, format!("expected a boolean, got {}", v.type_str())))
}

fn as_string(key: &str, v: &Value) -> Result<String> {
    v.as_str()
        .map(str::to_owned)
        .ok_or_else(|| bad(key, format!("expected a string, got {}", v.type_str())))
}

fn as_usize_list(key: &str, v: &Value) -> Result<Vec<usize>> {
    let arr = v
        .as_array()
        .ok_or_else(|| bad(key, format!("expected an array, got {}", v.type_str())))?;
    arr.iter().map(|x| as_usize(key, x)).collect()
}

fn int(x: usize) -> Value {
    Value::Integer(x as i64)
}

fn int_list(xs: &[usize]) -> Value {
    Value::Array(xs.iter().map(|&x| int(x)).collect())
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::validation("config", e.message().to_string()))?;
        let mut entries = Vec::new();
        flatten("", &table, &mut entries);
        let mut cfg = Config::default();
        for (k, v) in &entries {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Applies one key.
    pub fn set(&mut self, key: &str, v: &Value) -> Result<()> {
        let p = &mut self.perception;
        let g = &mut self.graph;
        match key {
            "seed" => self.seed = as_usize(key, v)? as u64,
            "data.train" => self.train_data = as_string(key, v)?,
            "data.val" => self.val_data = as_string(key, v)?,
            "model.channels" => {
                p.channels = as_usize(key, v)?;
                g.roi_channels = p.channels;
            }
            "model.levels" => {
                p.levels = as_usize_list(key, v)?;
                p.scale_ranges = default_scale_ranges(p.levels.len());
            }
            "model.backbone_widths" => p.backbone_widths = as_usize_list(key, v)?,
            "model.num_classes" => p.num_classes = as_usize(key, v)?,
            "model.roi_size" => {
                p.roi_size = as_usize(key, v)?;
                g.roi_size = p.roi_size;
            }
            "model.mask_size" => p.mask_size = as_usize(key, v)?,
            "model.mask_channels" => p.mask_channels = as_usize(key, v)?,
            "model.latent_dim" => g.latent_dim = as_usize(key, v)?,
            "model.edge_dim" => g.edge_dim = as_usize(key, v)?,
            "model.hidden_dim" => g.hidden_dim = as_usize(key, v)?,
            "model.encoder_channels" => g.encoder_channels = as_usize(key, v)?,
            "model.fuser_kernel" => self.fuser_kernel = as_usize(key, v)?,
            "detect.score_threshold" => p.score_threshold = as_f64(key, v)?,
            "detect.nms_iou" => p.nms_iou = as_f64(key, v)?,
            "detect.max_detections" => p.max_detections = as_usize(key, v)?,
            "loss.cls" => self.loss.cls = as_f64(key, v)?,
            "loss.box" => self.loss.box_iou = as_f64(key, v)?,
            "loss.ctr" => self.loss.ctr = as_f64(key, v)?,
            "loss.mask" => self.loss.mask = as_f64(key, v)?,
            "loss.edge" => self.loss.edge = as_f64(key, v)?,
            "loss.trans" => self.loss.trans = as_f64(key, v)?,
            "loss.focal_alpha" => p.focal_alpha = as_f64(key, v)?,
            "loss.focal_gamma" => p.focal_gamma = as_f64(key, v)?,
            "optim.lr" => self.optim.lr = as_f64(key, v)?,
            "optim.momentum" => self.optim.momentum = as_f64(key, v)?,
            "optim.iterations" => self.optim.iterations = as_usize(key, v)?,
            "optim.milestones" => self.optim.milestones = Some(as_usize_list(key, v)?),
            "optim.batch_size" => self.optim.batch_size = as_usize(key, v)?,
            "optim.grad_clip" => self.optim.grad_clip = as_f64(key, v)?,
            "optim.warmup" => self.optim.warmup = as_usize(key, v)?,
            "train.p_img" => self.train.p_img = as_f64(key, v)?,
            "train.max_proposals" => self.train.max_proposals = as_usize(key, v)?,
            "train.assoc_iou" => self.train.assoc_iou = as_f64(key, v)?,
            "train.loss_csv" => self.train.loss_csv = as_string(key, v)?,
            "tracker.alpha" => self.tracker.alpha = as_f64(key, v)?,
            "tracker.beta" => self.tracker.beta = as_f64(key, v)?,
            "tracker.gamma" => self.tracker.gamma = as_f64(key, v)?,
            "tracker.theta_new" => self.tracker.theta_new = as_f64(key, v)?,
            "tracker.epsilon" => self.tracker.epsilon = as_f64(key, v)?,
            "tracker.theta_iou" => self.tracker.theta_iou = as_f64(key, v)?,
            "tracker.mode" => {
                self.tracker.mode = match as_string(key, v)?.as_str() {
                    "edge" => TrackerMode::Edge,
                    "iou" => TrackerMode::Iou,
                    other => return Err(bad(key, format!("`{other}` is not one of edge, iou"))),
                }
            }
            "resfuser.enabled" => self.resfuser_enabled = as_bool(key, v)?,
            "gnn.enabled" => self.gnn_enabled = as_bool(key, v)?,
            other => return Err(bad(other, "unknown configuration key")),
        }
        Ok(())
    }

    /// Current value of `key`, or `None` for unset optional keys.
    fn get(&self, key: &str) -> Option<Value> {
        let (p, g) = (&self.perception, &self.graph);
        Some(match key {
            "seed" => Value::Integer(self.seed as i64),
            "data.train" => Value::String(self.train_data.clone()),
            "data.val" => Value::String(self.val_data.clone()),
            "model.channels" => int(p.channels),
            "model.levels" => int_list(&p.levels),
            "model.backbone_widths" => int_list(&p.backbone_widths),
            "model.num_classes" => int(p.num_classes),
            "model.roi_size" => int(p.roi_size),
            "model.mask_size" => int(p.mask_size),
            "model.mask_channels" => int(p.mask_channels),
            "model.latent_dim" => int(g.latent_dim),
            "model.edge_dim" => int(g.edge_dim),
            "model.hidden_dim" => int(g.hidden_dim),
            "model.encoder_channels" => int(g.encoder_channels),
            "model.fuser_kernel" => int(self.fuser_kernel),
            "detect.score_threshold" => Value::Float(p.score_threshold),
            "detect.nms_iou" => Value::Float(p.nms_iou),
            "detect.max_detections" => int(p.max_detections),
            "loss.cls" => Value::Float(self.loss.cls),
            "loss.box" => Value::Float(self.loss.box_iou),
            "loss.ctr" => Value::Float(self.loss.ctr),
            "loss.mask" => Value::Float(self.loss.mask),
            "loss.edge" => Value::Float(self.loss.edge),
            "loss.trans" => Value::Float(self.loss.trans),
            "loss.focal_alpha" => Value::Float(p.focal_alpha),
            "loss.focal_gamma" => Value::Float(p.focal_gamma),
            "optim.lr" => Value::Float(self.optim.lr),
            "optim.momentum" => Value::Float(self.optim.momentum),
            "optim.iterations" => int(self.optim.iterations),
            "optim.milestones" => int_list(self.optim.milestones.as_ref()?),
            "optim.batch_size" => int(self.optim.batch_size),
            "optim.grad_clip" => Value::Float(self.optim.grad_clip),
            "optim.warmup" => int(self.optim.warmup),
            "train.p_img" => Value::Float(self.train.p_img),
            "train.max_proposals" => int(self.train.max_proposals),
            "train.assoc_iou" => Value::Float(self.train.assoc_iou),
            "train.loss_csv" => Value::String(self.train.loss_csv.clone()),
            "tracker.alpha" => Value::Float(self.tracker.alpha),
            "tracker.beta" => Value::Float(self.tracker.beta),
            "tracker.gamma" => Value::Float(self.tracker.gamma),
            "tracker.theta_new" => Value::Float(self.tracker.theta_new),
            "tracker.epsilon" => Value::Float(self.tracker.epsilon),
            "tracker.theta_iou" => Value::Float(self.tracker.theta_iou),
            "tracker.mode" => Value::String(
                match self.tracker.mode {
                    TrackerMode::Edge => "edge",
                    TrackerMode::Iou => "iou",
                }
                .into(),
            ),
            "resfuser.enabled" => Value::Boolean(self.resfuser_enabled),
            "gnn.enabled" => Value::Boolean(self.gnn_enabled),
            _ => return None,
        })
    }

    /// Flat text with every set key; parses back to an equal config.
    pub fn to_toml_string(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            if let Some(v) = self.get(key) {
                // Bare dotted keys would be read as nested tables, which
                // flatten back to the same key.
                out.push_str(&format!("{key} = {v}\n"));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.perception.validate()?;
        self.tracker.validate()?;
        let weights = [
            ("loss.cls", self.loss.cls),
            ("loss.box", self.loss.box_iou),
            ("loss.ctr", self.loss.ctr),
            ("loss.mask", self.loss.mask),
            ("loss.edge", self.loss.edge),
            ("loss.trans", self.loss.trans),
            ("optim.lr", self.optim.lr),
            ("optim.grad_clip", self.optim.grad_clip),
        ];
        for (k, w) in weights {
            if !(w.is_finite() && w >= 0.0) {
                return Err(bad(k, "must be finite and >= 0"));
            }
        }
        if !(0.0..1.0).contains(&self.optim.momentum) {
            return Err(bad("optim.momentum", "must lie in [0, 1)"));
        }
        if self.optim.batch_size == 0 {
            return Err(bad("optim.batch_size", "must be positive"));
        }
        for m in self.optim.milestones() {
            if m >= self.optim.iterations && self.optim.milestones.is_some() {
                return Err(bad("optim.milestones", format!("{m} is not below optim.iterations = {}", self.optim.iterations)));
            }
        }
        if !(0.0..=1.0).contains(&self.train.p_img) {
            return Err(bad("train.p_img", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.train.assoc_iou) {
            return Err(bad("train.assoc_iou", "must lie in [0, 1]"));
        }
        if self.fuser_kernel % 2 == 0 {
            return Err(bad("model.fuser_kernel", "must be odd"));
        }
        if self.graph.latent_dim == 0 || self.graph.edge_dim == 0 || self.graph.hidden_dim == 0 || self.graph.encoder_channels == 0 {
            return Err(bad("model.latent_dim", "graph dimensions must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(Config::from_toml_str("").unwrap(), Config::default());
    }

    #[test]
    fn dotted_and_sectioned_keys_agree() {
        let a = Config::from_toml_str("tracker.alpha = 2.5\ngnn.enabled = false\noptim.milestones = [10, 20]\noptim.iterations = 30\n").unwrap();
        let b = Config::from_toml_str("[tracker]\nalpha = 2.5\n[gnn]\nenabled = false\n[optim]\nmilestones = [10, 20]\niterations = 30\n").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.tracker.alpha, 2.5);
        assert!(!a.gnn_enabled);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = Config::from_toml_str("tracker.alhpa = 1.0").unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("tracker.alhpa"), "{err}");
    }

    #[test]
    fn wrong_type_and_range_are_named() {
        let err = Config::from_toml_str("optim.lr = \"fast\"").unwrap_err();
        assert!(err.to_string().contains("optim.lr"), "{err}");
        let err = Config::from_toml_str("loss.mask = -1.0").unwrap_err();
        assert!(err.to_string().contains("loss.mask"), "{err}");
        let err = Config::from_toml_str("optim.iterations = 10\noptim.milestones = [5, 10]").unwrap_err();
        assert!(err.to_string().contains("optim.milestones"), "{err}");
        let err = Config::from_toml_str("tracker.mode = \"kalman\"").unwrap_err();
        assert!(err.to_string().contains("tracker.mode"), "{err}");
        assert!(Config::from_toml_str("= broken").unwrap_err().is_validation());
    }

    #[test]
    fn text_round_trip_is_exact() {
        let mut cfg = Config::from_toml_str("model.channels = 8\nmodel.levels = [2, 3]\noptim.lr = 0.0123456789\nseed = 7\ndata.train = \"a b/c\"").unwrap();
        cfg.optim.milestones = Some(vec![1, 2]);
        let text = cfg.to_toml_string();
        let back = Config::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml_string(), text);
        assert_eq!(back.graph.roi_channels, 8);
    }

    #[test]
    fn every_key_is_writable_and_readable() {
        let text = Config::default().to_toml_string();
        let written: Vec<&str> = text.lines().map(|l| l.split(" = ").next().unwrap()).collect();
        for k in KEYS {
            assert!(written.contains(k) || *k == "optim.milestones", "{k}");
        }
    }

    #[test]
    fn schedule_warms_up_then_decays() {
        let o = OptimConfig {
            lr: 1.0,
            iterations: 100,
            warmup: 10,
            ..OptimConfig::default()
        };
        assert_eq!(o.milestones(), vec![60, 85]);
        assert!((o.lr_at(0) - 0.1).abs() < 1e-12);
        assert_eq!(o.lr_at(10), 1.0);
        assert!((o.lr_at(60) - 0.1).abs() < 1e-12);
        assert!((o.lr_at(99) - 0.01).abs() < 1e-12);
    }
}
