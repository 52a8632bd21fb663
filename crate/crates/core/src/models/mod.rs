//! Learned relative-motion predictors, their losses and training.

pub mod checkpoint;
pub mod config;
mod encoder;
pub mod loss;
mod motion;
mod regressor;
pub mod train;
mod transformer;

pub use config::{
    EncoderConfig, ModelConfig, ModelKind, RegressorConfig, StageConfig, TrainConfig, TransformerConfig,
    INPUT_CHANNELS,
};
pub use encoder::Encoder;
pub use loss::{loss_rotation, loss_rotation_grad, loss_translation, loss_translation_grad, smooth_l1};
pub use motion::{batch_tensor, with_coords, LossParts, MotionModel};
pub use regressor::Regressor;
pub use train::{
    predict_windows, target_code, train, train_with, window_indices, windows_from_sequence, TrainReport, Window,
    WindowConfig,
};
pub use transformer::Transformer;
