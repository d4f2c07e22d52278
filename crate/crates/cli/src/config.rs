//! Flat TOML run configuration. Every key is optional; missing keys take the
//! defaults documented on each field, unknown keys are rejected.

use std::path::{Path, PathBuf};

use avnav::acoustics::{AcousticConfig, SignatureSet};
use avnav::env::DepthConfig;
use avnav::policy::PolicyConfig;
use avnav::sim::{NoiseConfig, SensorConfig};
use avnav::trainer::{Ablation, PpoConfig};
use avnav_tensor::OptimizerKind;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed for every random stream. Default 0.
    pub seed: u64,
    /// `full`, `no_ac`, `no_lp` or `none`. Default `full`.
    pub ablation: String,
    /// Directory for the training log and checkpoints. Default `runs/default`.
    pub out_dir: PathBuf,
    /// Default `data/train_scenes.txt`.
    pub train_scenes: PathBuf,
    /// Default `data/train_episodes.txt`.
    pub train_episodes: PathBuf,
    /// Default `data/test_scenes.txt`.
    pub test_scenes: PathBuf,
    /// Default `data/test_episodes.txt`.
    pub test_episodes: PathBuf,

    /// Discount factor. Default 0.99.
    pub gamma: f64,
    /// GAE smoothing. Default 0.95.
    pub gae_lambda: f64,
    /// PPO ratio clip. Default 0.2.
    pub clip: f32,
    /// Passes over each rollout. Default 4.
    pub epochs: usize,
    /// Minibatches per pass. Default 4.
    pub minibatches: usize,
    /// Learning rate. Default 2.5e-4.
    pub lr: f32,
    /// Default 0.5.
    pub value_coef: f32,
    /// Default 0.01.
    pub entropy_coef: f32,
    /// Audio classifier loss weight. Default 1.0.
    pub class_weight: f32,
    /// Direction prediction loss weight. Default 1.0.
    pub locate_weight: f32,
    /// Upper bound of the gradient reversal ramp. Default 1.0.
    pub lambda_bound: f64,
    /// Episode budget; also the horizon of the reversal ramp. Default 10000.
    pub total_episodes: u64,
    /// Steps per environment per rollout. Default 128.
    pub rollout_len: usize,
    /// Parallel environments. Default 4.
    pub num_envs: usize,
    /// Truncated backpropagation length. Default 16.
    pub bptt_len: usize,
    /// Global gradient norm cap; 0 disables clipping. Default 0.5.
    pub max_grad_norm: f32,
    /// `adam` or `sgd`. Default `adam`.
    pub optimizer: String,
    /// Stop after this many environment steps; 0 means no cap. Default 0.
    pub max_env_steps: u64,
    /// Save a checkpoint every this many updates; 0 saves only the first and
    /// last. Default 50.
    pub checkpoint_every: u64,

    /// Spectrogram frequency bins. Default 8.
    pub bins: usize,
    /// Spectrogram time frames. Default 8.
    pub frames: usize,
    /// Interaural level difference coefficient. Default 0.8.
    pub ild: f32,
    /// Seed of the category sound signatures. Default 0.
    pub dataset_seed: u64,

    /// Depth rays. Default 16.
    pub rays: usize,
    /// Depth field of view in degrees. Default 90.
    pub fov_deg: f64,
    /// Depth clip distance. Default 10.
    pub max_depth: f32,
    /// Audio SNR in dB; 0 disables audio noise. Default 0.
    pub audio_snr_db: f64,
    /// Per-ray depth noise standard deviation. Default 0.
    pub depth_noise: f32,

    /// Default 128.
    pub audio_hidden: usize,
    /// Default 64.
    pub audio_out: usize,
    /// Default 64.
    pub visual_hidden: usize,
    /// Default 32.
    pub visual_out: usize,
    /// Recurrent state size. Default 128.
    pub hidden: usize,
    /// Width of the classifier and direction heads. Default 64.
    pub head_hidden: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let ppo = PpoConfig::default();
        let ac = AcousticConfig::default();
        let depth = DepthConfig::default();
        let pol = PolicyConfig::default();
        Self {
            seed: ppo.seed,
            ablation: Ablation::Full.as_str().into(),
            out_dir: "runs/default".into(),
            train_scenes: "data/train_scenes.txt".into(),
            train_episodes: "data/train_episodes.txt".into(),
            test_scenes: "data/test_scenes.txt".into(),
            test_episodes: "data/test_episodes.txt".into(),
            gamma: ppo.gamma,
            gae_lambda: ppo.gae_lambda,
            clip: ppo.clip,
            epochs: ppo.epochs,
            minibatches: ppo.minibatches,
            lr: ppo.lr,
            value_coef: ppo.value_coef,
            entropy_coef: ppo.entropy_coef,
            class_weight: ppo.class_weight,
            locate_weight: ppo.locate_weight,
            lambda_bound: ppo.lambda_bound,
            total_episodes: ppo.total_episodes,
            rollout_len: ppo.rollout_len,
            num_envs: ppo.num_envs,
            bptt_len: ppo.bptt_len,
            max_grad_norm: ppo.max_grad_norm.unwrap_or(0.0),
            optimizer: "adam".into(),
            max_env_steps: 0,
            checkpoint_every: 50,
            bins: ac.bins,
            frames: ac.frames,
            ild: ac.ild,
            dataset_seed: ac.dataset_seed,
            rays: depth.rays,
            fov_deg: depth.fov.to_degrees(),
            max_depth: depth.max_depth as f32,
            audio_snr_db: 0.0,
            depth_noise: 0.0,
            audio_hidden: pol.audio_hidden,
            audio_out: pol.audio_out,
            visual_hidden: pol.visual_hidden,
            visual_out: pol.visual_out,
            hidden: pol.hidden,
            head_hidden: pol.head_hidden,
        }
    }
}

/// Command-line values that apply unless the config file sets the same key.
#[derive(Debug, Default)]
pub struct Overrides(pub toml::Table);

impl Overrides {
    pub fn set(&mut self, key: &str, value: impl Into<toml::Value>) {
        self.0.insert(key.into(), value.into());
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, flags: Overrides) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        for (k, v) in flags.0 {
            table.entry(k).or_insert(v);
        }
        let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, or starts from defaults when no file is given.
    pub fn load(path: Option<&Path>, flags: Overrides) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?,
            None => String::new(),
        };
        Self::from_toml(&text, flags)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.ablation()?;
        self.optimizer()?;
        self.ppo().validate()?;
        self.acoustics().validate()?;
        if self.rays < 2 || !(self.fov_deg > 0.0 && self.fov_deg < 360.0) || !(self.max_depth > 0.0) {
            return Err(CliError::Config("depth sensor needs rays >= 2, fov in (0, 360) and positive max_depth".into()));
        }
        if self.audio_snr_db < 0.0 || self.depth_noise < 0.0 || self.max_grad_norm < 0.0 {
            return Err(CliError::Config("audio_snr_db, depth_noise and max_grad_norm must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn ablation(&self) -> Result<Ablation> {
        Ok(self.ablation.parse()?)
    }

    pub fn optimizer(&self) -> Result<OptimizerKind> {
        match self.optimizer.as_str() {
            "adam" => Ok(OptimizerKind::adam()),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(CliError::Config(format!("unknown optimizer {other:?} (expected adam or sgd)"))),
        }
    }

    pub fn ppo(&self) -> PpoConfig {
        PpoConfig {
            gamma: self.gamma,
            gae_lambda: self.gae_lambda,
            clip: self.clip,
            epochs: self.epochs,
            minibatches: self.minibatches,
            lr: self.lr,
            value_coef: self.value_coef,
            entropy_coef: self.entropy_coef,
            class_weight: self.class_weight,
            locate_weight: self.locate_weight,
            lambda_bound: self.lambda_bound,
            total_episodes: self.total_episodes,
            rollout_len: self.rollout_len,
            num_envs: self.num_envs,
            bptt_len: self.bptt_len,
            max_grad_norm: (self.max_grad_norm > 0.0).then_some(self.max_grad_norm),
            optimizer: self.optimizer().unwrap_or_else(|_| OptimizerKind::adam()),
            seed: self.seed,
        }
    }

    pub fn acoustics(&self) -> AcousticConfig {
        AcousticConfig {
            bins: self.bins,
            frames: self.frames,
            ild: self.ild,
            noise_snr_db: (self.audio_snr_db > 0.0).then_some(self.audio_snr_db as f32),
            dataset_seed: self.dataset_seed,
        }
    }

    pub fn signatures(&self) -> Result<SignatureSet> {
        Ok(SignatureSet::for_config(&self.acoustics())?)
    }

    pub fn sensors(&self) -> SensorConfig {
        SensorConfig {
            depth: DepthConfig { rays: self.rays, fov: self.fov_deg.to_radians(), max_depth: f64::from(self.max_depth) },
            ild: self.ild,
            noise: NoiseConfig {
                audio_snr_db: (self.audio_snr_db > 0.0).then_some(self.audio_snr_db),
                depth_stddev: self.depth_noise,
            },
        }
    }

    pub fn policy(&self) -> PolicyConfig {
        PolicyConfig {
            bins: self.bins,
            frames: self.frames,
            rays: self.rays,
            max_depth: self.max_depth,
            audio_hidden: self.audio_hidden,
            audio_out: self.audio_out,
            visual_hidden: self.visual_hidden,
            visual_out: self.visual_out,
            hidden: self.hidden,
            head_hidden: self.head_hidden,
            ..PolicyConfig::default()
        }
    }
}
