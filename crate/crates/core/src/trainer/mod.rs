//! PPO with generalized advantage estimation, jointly optimizing the
//! adversarial audio classifier and the source direction predictor.

mod buffer;
mod config;
mod rollout;
mod train;
mod update;

pub use buffer::{gae_advantages, normalize, RolloutBuffer};
pub use config::{Ablation, PpoConfig};
pub use rollout::{collect_rollout, EpisodePool, Workers};
pub use train::{load_policy, train, TrainOptions, TrainOutcome, TrainState, LOG_HEADER};
pub use update::{build_loss, minibatch_gradients, ppo_update, Batch, LossReport, LossVars};
