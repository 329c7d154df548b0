//! Toy-scale trainable reconstruction network with hand-written gradients.

pub mod checkpoint;
pub mod mlp;
pub mod model;
pub mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CheckpointFormat};
pub use mlp::{Activation, Layer, Mlp};
pub use model::{gradient_check, Discriminator, ModelConfig, Prediction, Sample, SddrModel};
pub use train::{evaluate_model, history_csv, predict_pose, train, LossRecord, ModelEval, TrainConfig, TrainOutput, Trainer, Variant};
