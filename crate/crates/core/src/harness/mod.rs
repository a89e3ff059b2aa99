//! End-to-end orchestration: configuration, training, online inference,
//! checkpoints, evaluation files and overlays.

mod checkpoint;
mod config;
mod evaluate;
mod infer;
mod model;
mod train;
mod viz;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointMeta, MAGIC, VERSION};
pub use config::{Config, LossWeights, OptimConfig, TrainConfig, KEYS};
pub use evaluate::{
    count_id_switches, evaluate_model, read_results, results_to_json, run_ablation, write_report, write_results, AblationRow,
};
pub use infer::{paste_mask, ClipTracker, FrameDetection};
pub use model::Model;
pub use train::{consecutive_pair, loss_csv, loss_csv_path, sample_pair, train, train_to_file, LossRecord, PairLosses, Trained};
pub use viz::{track_color, visualize, visualize_dataset};
