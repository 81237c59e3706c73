//! Optimisation: MADGRAD, the per-track objective and the training loop.

mod checkpoint;
pub mod madgrad;
pub mod objective;
mod train;

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use madgrad::{madgrad_step, MadgradConfig, MadgradState};
pub use objective::{composite_gradcheck, track_objective, TrackObjective};
pub use train::{split_corpus, train, EpochRecord, TrainConfig, TrainHistory, TrainTrack, Trainer};
