//! Desk-scale semi-supervised restoration: a bottleneck denoiser trained on
//! labeled pairs, then on gated unlabeled signals with pseudo-labels.

pub mod ablation;
pub mod model;
pub mod task;
pub mod train;

pub use ablation::{run_ablation, AblationOutcome};
pub use model::ToyModel;
pub use task::{make_toy_task, TaskConfig, ToyTask};
pub use train::{evaluate, train_arm, train_labeled_phase, train_unlabeled_phase, unsup_loss, Arm, TrainConfig};
