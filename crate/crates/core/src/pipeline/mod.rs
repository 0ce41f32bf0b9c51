//! Training with validation tracking and overfit detection, evaluation,
//! metrics, checkpoints and the two-stage classifier.

mod checkpoint;
mod data;
mod metrics;
mod train;
mod two_stage;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use data::LabeledSet;
pub use metrics::{argmax, compute_metrics, evaluate, predict, ConfusionMatrix, MetricsReport};
pub use train::{detect_overfit, evaluate_loss, train, train_with, EpochRow, TrainConfig, TrainingHistory};
pub use two_stage::{classify_two_stage, Outcome, TwoStageClassifier, TwoStageVerdict, DEFAULT_REVIEW_THRESHOLD};
