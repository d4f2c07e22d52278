use std::collections::VecDeque;
use std::fs::{self, File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use avnav_tensor::{Archive, Optimizer};

use super::config::{Ablation, PpoConfig};
use super::rollout::{collect_rollout, EpisodePool, Workers};
use super::update::ppo_update;
use crate::acoustics::SignatureSet;
use crate::error::{Error, Result};
use crate::policy::{lambda_schedule, Policy, PolicyConfig};
use crate::seed;
use crate::sim::SensorConfig;

pub const LOG_HEADER: &str = "update,env_steps,n,lambda,sr_rolling,loss_actor,loss_value,loss_entropy,loss_C,loss_P";
/// Episodes in the rolling success rate.
const SR_WINDOW: usize = 100;

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub ppo: PpoConfig,
    pub ablation: Ablation,
    pub policy: PolicyConfig,
    pub sensors: SensorConfig,
    pub out_dir: PathBuf,
    /// Write a checkpoint every this many updates (0 = only initial and final).
    pub checkpoint_every: u64,
    /// Optional cap on environment steps, on top of the episode budget.
    pub max_env_steps: Option<u64>,
    /// Checkpoint stem to continue from.
    pub resume: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainState {
    /// Completed episodes.
    pub n: u64,
    pub env_steps: u64,
    pub updates: u64,
    pub lambda: f64,
    pub recent: VecDeque<bool>,
}

impl TrainState {
    pub fn rolling_success(&self) -> f64 {
        if self.recent.is_empty() {
            0.0
        } else {
            self.recent.iter().filter(|&&s| s).count() as f64 / self.recent.len() as f64
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub policy: Policy,
    pub log_path: PathBuf,
    pub checkpoints: Vec<PathBuf>,
}

fn checkpoint_stem(out_dir: &Path, updates: u64) -> PathBuf {
    out_dir.join("checkpoints").join(format!("ckpt_{updates:06}"))
}

fn save_checkpoint(
    stem: &Path,
    policy: &Policy,
    opt: &Optimizer,
    state: &TrainState,
    opts: &TrainOptions,
) -> Result<()> {
    let mut a = policy.to_archive();
    let cfg = &opts.ppo;
    for (k, v) in [
        ("n", state.n.to_string()),
        ("total_episodes", cfg.total_episodes.to_string()),
        ("lambda_bound", cfg.lambda_bound.to_string()),
        ("env_steps", state.env_steps.to_string()),
        ("updates", state.updates.to_string()),
        ("seed", cfg.seed.to_string()),
        ("ablation", opts.ablation.as_str().to_string()),
    ] {
        a.meta.insert(k.to_string(), v);
    }
    let (steps, first, second) = opt.state();
    a.meta.insert("optimizer_steps".into(), steps.to_string());
    for (((_, p), m), v) in policy.store.iter().zip(first).zip(second) {
        a.tensors.push((format!("opt.m.{}", p.name), m.clone()));
        a.tensors.push((format!("opt.v.{}", p.name), v.clone()));
    }
    let recent: String = state.recent.iter().map(|&s| if s { '1' } else { '0' }).collect();
    if !recent.is_empty() {
        a.meta.insert("recent".into(), recent);
    }
    Ok(a.save(stem)?)
}

fn meta<T: std::str::FromStr>(a: &Archive, key: &str) -> Result<T> {
    a.meta
        .get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::InvalidArgument(format!("checkpoint meta {key} missing or malformed")))
}

fn load_checkpoint(stem: &Path, policy: &mut Policy, opt: &mut Optimizer) -> Result<TrainState> {
    let a = Archive::load(stem)?;
    policy.load_archive(&a)?;
    let mut first = Vec::new();
    let mut second = Vec::new();
    for (_, p) in policy.store.iter() {
        let get = |k: String| a.get(&k).cloned().ok_or_else(|| Error::InvalidArgument(format!("checkpoint lacks {k}")));
        first.push(get(format!("opt.m.{}", p.name))?);
        second.push(get(format!("opt.v.{}", p.name))?);
    }
    opt.restore(meta(&a, "optimizer_steps")?, first, second)?;
    let recent = a.meta.get("recent").map(|s| s.chars().map(|c| c == '1').collect()).unwrap_or_default();
    Ok(TrainState {
        n: meta(&a, "n")?,
        env_steps: meta(&a, "env_steps")?,
        updates: meta(&a, "updates")?,
        lambda: 0.0,
        recent,
    })
}

/// Alternates rollout collection and PPO updates until the episode budget
/// (or the optional step cap) is spent, logging one CSV row per update.
pub fn train(opts: &TrainOptions, pool: &EpisodePool, sigs: Arc<SignatureSet>) -> Result<TrainOutcome> {
    let cfg = opts.ppo.with_ablation(opts.ablation);
    cfg.validate()?;
    fs::create_dir_all(&opts.out_dir)?;
    let mut policy = Policy::new(opts.policy, &mut seed::stream(cfg.seed, "policy-init", 0));
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr, &policy.store).with_max_grad_norm(cfg.max_grad_norm);
    let log_path = opts.out_dir.join("train_log.csv");
    let mut checkpoints = Vec::new();

    let (mut state, mut log) = match &opts.resume {
        Some(stem) => {
            let mut state = load_checkpoint(stem, &mut policy, &mut opt)?;
            state.lambda = lambda_schedule(state.n.min(cfg.total_episodes), cfg.total_episodes, cfg.lambda_bound)?;
            let log = OpenOptions::new().append(true).create(true).open(&log_path)?;
            (state, log)
        }
        None => {
            let mut log = File::create(&log_path)?;
            writeln!(log, "{LOG_HEADER}")?;
            let state = TrainState::default();
            let stem = checkpoint_stem(&opts.out_dir, 0);
            save_checkpoint(&stem, &policy, &opt, &state, opts)?;
            checkpoints.push(stem);
            (state, log)
        }
    };

    let mut workers = Workers::new(pool, sigs, opts.sensors, cfg.num_envs, opts.policy.hidden, cfg.seed)?;
    let steps_left = |s: &TrainState| opts.max_env_steps.is_none_or(|m| s.env_steps < m);
    let mut last_saved = state.updates;
    while state.n < cfg.total_episodes && steps_left(&state) {
        let mut rng = seed::stream(cfg.seed, "rollout", state.updates);
        let (buf, finished) = collect_rollout(&policy, &mut workers, pool, cfg.rollout_len, &mut rng)?;
        state.env_steps += buf.len() as u64;
        for success in finished {
            state.n += 1;
            state.recent.push_back(success);
            if state.recent.len() > SR_WINDOW {
                state.recent.pop_front();
            }
        }
        state.lambda = lambda_schedule(state.n.min(cfg.total_episodes), cfg.total_episodes, cfg.lambda_bound)?;
        let mut shuffle = seed::stream(cfg.seed, "minibatch", state.updates);
        let report = ppo_update(&mut policy, &mut opt, &buf, &cfg, state.lambda as f32, &mut shuffle, state.updates)?;
        state.updates += 1;
        writeln!(
            log,
            "{},{},{},{:.7},{:.4},{:.6},{:.6},{:.6},{:.6},{:.6}",
            state.updates,
            state.env_steps,
            state.n,
            state.lambda,
            state.rolling_success(),
            report.actor,
            report.value,
            report.entropy,
            report.class,
            report.locate
        )?;
        if opts.checkpoint_every > 0 && state.updates % opts.checkpoint_every == 0 {
            let stem = checkpoint_stem(&opts.out_dir, state.updates);
            save_checkpoint(&stem, &policy, &opt, &state, opts)?;
            checkpoints.push(stem);
            last_saved = state.updates;
        }
    }
    if last_saved != state.updates {
        let stem = checkpoint_stem(&opts.out_dir, state.updates);
        save_checkpoint(&stem, &policy, &opt, &state, opts)?;
        checkpoints.push(stem);
    }
    log.flush()?;
    Ok(TrainOutcome { state, policy, log_path, checkpoints })
}

/// Loads policy parameters from a checkpoint written by [`train`].
pub fn load_policy(stem: &Path, cfg: PolicyConfig) -> Result<Policy> {
    let a = Archive::load(stem)?;
    let classes: usize = meta(&a, "policy.classes")?;
    if classes != cfg.classes {
        return Err(Error::InvalidArgument(format!(
            "checkpoint has {classes} classifier outputs, config expects {}",
            cfg.classes
        )));
    }
    let mut p = Policy::zeros(cfg);
    p.load_archive(&a)?;
    Ok(p)
}

