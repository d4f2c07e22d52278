use std::str::FromStr;

use avnav_tensor::OptimizerKind;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f32,
    pub epochs: usize,
    pub minibatches: usize,
    pub lr: f32,
    pub value_coef: f32,
    pub entropy_coef: f32,
    /// Weight of the audio classifier loss.
    pub class_weight: f32,
    /// Weight of the direction prediction loss.
    pub locate_weight: f32,
    /// Upper bound of the reversal-strength ramp.
    pub lambda_bound: f64,
    /// Planned number of completed episodes.
    pub total_episodes: u64,
    pub rollout_len: usize,
    pub num_envs: usize,
    /// Truncated backpropagation length; must divide `rollout_len`.
    pub bptt_len: usize,
    pub max_grad_norm: Option<f32>,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.2,
            epochs: 4,
            minibatches: 4,
            lr: 2.5e-4,
            value_coef: 0.5,
            entropy_coef: 0.01,
            class_weight: 1.0,
            locate_weight: 1.0,
            lambda_bound: 1.0,
            total_episodes: 10_000,
            rollout_len: 128,
            num_envs: 4,
            bptt_len: 16,
            max_grad_norm: Some(0.5),
            optimizer: OptimizerKind::adam(),
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma {} outside (0, 1]", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad(format!("gae_lambda {} outside [0, 1]", self.gae_lambda));
        }
        if !(self.clip > 0.0) {
            return bad(format!("clip {} must be positive", self.clip));
        }
        if self.lambda_bound < 0.0 || !self.lambda_bound.is_finite() {
            return bad(format!("lambda_bound {} must be finite and nonnegative", self.lambda_bound));
        }
        if self.epochs == 0 || self.minibatches == 0 || self.rollout_len == 0 || self.num_envs == 0 || self.bptt_len == 0 {
            return bad("epochs, minibatches, rollout_len, num_envs and bptt_len must be positive".into());
        }
        if !self.rollout_len.is_multiple_of(self.bptt_len) {
            return bad(format!("bptt_len {} does not divide rollout_len {}", self.bptt_len, self.rollout_len));
        }
        let chunks = self.num_envs * self.rollout_len / self.bptt_len;
        if self.minibatches > chunks {
            return bad(format!("{} minibatches but only {chunks} sequence chunks", self.minibatches));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        Ok(())
    }

    pub fn with_ablation(mut self, mode: Ablation) -> Self {
        if !mode.uses_classifier() {
            self.class_weight = 0.0;
        }
        if !mode.uses_locator() {
            self.locate_weight = 0.0;
        }
        self
    }
}

/// Which auxiliary heads take part in training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Ablation {
    Full,
    NoAc,
    NoLp,
    /// Plain recurrent actor-critic backbone.
    None,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Full, Ablation::NoAc, Ablation::NoLp, Ablation::None];

    pub fn uses_classifier(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoLp)
    }

    pub fn uses_locator(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoAc)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoAc => "no_ac",
            Ablation::NoLp => "no_lp",
            Ablation::None => "none",
        }
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Ablation::Full),
            "no_ac" => Ok(Ablation::NoAc),
            "no_lp" => Ok(Ablation::NoLp),
            "none" => Ok(Ablation::None),
            _ => Err(Error::Config(format!("unknown ablation mode {s:?} (expected full, no_ac, no_lp or none)"))),
        }
    }
}
