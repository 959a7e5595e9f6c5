//! The full encoder-decoder, its training loop, checkpoints and inference.

pub mod checkpoint;
pub mod model;
pub mod predict;
pub mod spec;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use model::{build_network, DuckNet};
pub use predict::{predict_file, predict_mask, render_panel};
pub use spec::NetSpec;
pub use train::{train, train_step, EpochRecord, History, Optimizer, TrainConfig, TrainOutcome, Trainer};
