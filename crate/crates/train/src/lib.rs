//! Detector training: plain cross-entropy, gradient-norm ("Lipschitz")
//! regularization computed with exact double backprop, and blur fine-tuning.

pub mod error;
pub mod loss;
pub mod optimizer;
pub mod trainer;

pub use error::{Result, TrainError};
pub use loss::{augmented_loss, check_double_backprop, cross_entropy_loss, lipschitz_penalty};
pub use optimizer::{Adam, OptimizerId};
pub use trainer::{
    fine_tune_blur, train_detector, EpochStats, RegularizationConfig, TrainConfig, TrainedDetector,
};
