//! Toy-scale learned mapping from input-signal SH coefficients to FOD SH
//! coefficients: patch sampling, ridge and MLP regressors, Adam training
//! with early stopping, and sliding-window volume inference.

mod adam;
mod checkpoint;
mod model;
mod patches;
mod train;

pub use adam::{adam_step, AdamParams, AdamState};
pub use checkpoint::{load_model, save_model};
pub use model::{l2_loss, Model, ModelKind, ModelSpec};
pub use patches::{sample_patches, RegressionDataset};
pub use train::{fit_ridge, predict_volume, train, TrainConfig, TrainHistory};
