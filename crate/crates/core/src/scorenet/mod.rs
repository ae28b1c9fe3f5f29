//! Learned noise predictor: network, wrapper, training, checkpoints.

pub mod checkpoint;
pub mod mlp;
pub mod model;
pub mod train;

pub use checkpoint::{from_json, load_checkpoint, save_checkpoint, to_json, Checkpoint, SCHEMA_VERSION};
pub use mlp::{Activation, Mlp};
pub use model::{model_score, Architecture, NetGrads, ScoreModel, ScoreNet, Skip, SkipMode, T_MIN};
pub use train::{
    adam_step, draw_noise, eval_dsm_at, loss_and_grad, minibatch_loss, train, train_two_model,
    write_loss_csv, AdamState, TrainConfig, TrainOutcome, DEFAULT_T_SPLIT, HIGH_NOISE_DELTA,
};
