//! Policy refinement of the eNMPC with proximal policy optimization.

pub mod buffer;
pub mod config;
pub mod critic;
pub mod policy;
pub mod ppo;
pub mod train;

pub use buffer::{gae, normalize, RolloutBuffer, Transition};
pub use config::PpoConfig;
pub use critic::Critic;
pub use policy::{act, clip_action, gaussian_entropy, gaussian_log_prob, ActionSample, Actor, KoopmanActor};
pub use ppo::{ppo_gradients, ppo_update, Gradients, LossStats, UpdateStats};
pub use train::{
    curve_csv, evaluate, train, write_curve_csv, Checkpoint, CurvePoint, TrainOutput, TrainResult, CHECKPOINT_FORMAT,
    CHECKPOINT_VERSION, CURVE_HEADER,
};
