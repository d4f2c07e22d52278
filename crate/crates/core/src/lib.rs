//! Audio-visual navigation laboratory: gridworld scenes, synthetic binaural
//! audio, a recurrent actor-critic with adversarial and direction-prediction
//! heads, PPO training and evaluation.

pub mod acoustics;
pub mod env;
pub mod eval;
pub mod policy;
mod error;
pub mod seed;
pub mod trainer;
pub mod sim;

pub use error::{Error, Result};
