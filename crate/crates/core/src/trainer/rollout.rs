use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng as _;

use avnav_tensor::Tensor;

use super::buffer::RolloutBuffer;
use crate::acoustics::SignatureSet;
use crate::env::{relative_angles, Episode, SceneGrid};
use crate::error::{Error, Result};
use crate::policy::{act, encode_observations, ActMode, Policy};
use crate::seed::{self, Rng};
use crate::sim::{NavEnv, Observation, SensorConfig};

/// Scenes and the episodes defined on them.
#[derive(Clone, Debug)]
pub struct EpisodePool {
    scenes: BTreeMap<u32, Arc<SceneGrid>>,
    episodes: Vec<Episode>,
}

impl EpisodePool {
    pub fn new(scenes: Vec<SceneGrid>, episodes: Vec<Episode>) -> Result<Self> {
        if episodes.is_empty() {
            return Err(Error::EmptyInput("episode pool"));
        }
        let scenes: BTreeMap<u32, Arc<SceneGrid>> = scenes.into_iter().map(|s| (s.id, Arc::new(s))).collect();
        if let Some(e) = episodes.iter().find(|e| !scenes.contains_key(&e.scene_id)) {
            return Err(Error::InvalidArgument(format!("episode refers to missing scene {}", e.scene_id)));
        }
        Ok(Self { scenes, episodes })
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn episodes(&self) -> &[Episode] {
        &self.episodes
    }

    pub fn episode(&self, i: usize) -> &Episode {
        &self.episodes[i]
    }

    pub fn scene(&self, id: u32) -> Result<&Arc<SceneGrid>> {
        self.scenes
            .get(&id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scene {id}")))
    }

    pub fn scenes(&self) -> impl Iterator<Item = &Arc<SceneGrid>> {
        self.scenes.values()
    }
}

/// Parallel environments with their current observations and recurrent state.
#[derive(Clone, Debug)]
pub struct Workers {
    envs: Vec<NavEnv>,
    episode_index: Vec<usize>,
    obs: Vec<Observation>,
    starts: Vec<bool>,
    hidden: Tensor,
    sampler: Rng,
}

impl Workers {
    pub fn new(
        pool: &EpisodePool,
        sigs: Arc<SignatureSet>,
        sensors: SensorConfig,
        num_envs: usize,
        hidden_dim: usize,
        root_seed: u64,
    ) -> Result<Self> {
        let mut sampler = seed::stream(root_seed, "episode-sampler", 0);
        let mut envs = Vec::with_capacity(num_envs);
        let mut episode_index = Vec::with_capacity(num_envs);
        let mut obs = Vec::with_capacity(num_envs);
        for e in 0..num_envs {
            let i = sampler.random_range(0..pool.len());
            let ep = pool.episode(i).clone();
            let scene = pool.scene(ep.scene_id)?.clone();
            let mut env = NavEnv::new(scene, ep, sigs.clone(), sensors, seed::stream(root_seed, "noise", e as u64))?;
            obs.push(env.observe()?);
            envs.push(env);
            episode_index.push(i);
        }
        Ok(Self {
            envs,
            episode_index,
            obs,
            starts: vec![true; num_envs],
            hidden: Tensor::zeros(&[num_envs, hidden_dim]),
            sampler,
        })
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn envs(&self) -> &[NavEnv] {
        &self.envs
    }
}

/// Steps every environment `length` times with actions sampled from the
/// frozen policy. Returns the buffer and the success flags of episodes that
/// finished, ordered by step and then environment index.
pub fn collect_rollout(
    policy: &Policy,
    workers: &mut Workers,
    pool: &EpisodePool,
    length: usize,
    rng: &mut Rng,
) -> Result<(RolloutBuffer, Vec<bool>)> {
    let cfg = *policy.cfg();
    let (n, h) = (workers.len(), cfg.hidden);
    let cap = n * length;
    let mut buf = RolloutBuffer {
        steps: length,
        envs: n,
        audio_dim: cfg.audio_dim(),
        rays: cfg.rays,
        hidden_dim: h,
        audio: Vec::with_capacity(cap * cfg.audio_dim()),
        depth: Vec::with_capacity(cap * cfg.rays),
        prev_action: Vec::with_capacity(cap * 4),
        hidden: Vec::with_capacity(cap * h),
        ..RolloutBuffer::default()
    };
    let mut finished = Vec::new();
    for _ in 0..length {
        let refs: Vec<&Observation> = workers.obs.iter().collect();
        let (audio, depth, prev) = encode_observations(&cfg, &refs)?;
        let (logits, values, mut next_hidden) = policy.act_step(&refs, &workers.hidden)?;
        buf.audio.extend_from_slice(audio.data());
        buf.depth.extend_from_slice(depth.data());
        buf.prev_action.extend_from_slice(prev.data());
        buf.hidden.extend_from_slice(workers.hidden.data());

        for e in 0..n {
            let (action, log_prob) = act(logits.row_slice(e), rng, ActMode::Sample)?;
            let env = &mut workers.envs[e];
            let (alpha, beta) = relative_angles(env.pose(), env.episode());
            buf.actions.push(action.index());
            buf.log_probs.push(log_prob);
            buf.values.push(values.data()[e]);
            buf.starts.push(workers.starts[e]);
            buf.categories.push(env.episode().category);
            buf.angles.push([alpha.sin() as f32, alpha.cos() as f32, beta.sin() as f32, beta.cos() as f32]);
            buf.at_source.push(env.at_source());
            buf.poses.push(env.pose());
            buf.episodes.push(workers.episode_index[e]);

            let result = env.step(action)?;
            buf.rewards.push(result.reward);
            buf.dones.push(result.done);
            if result.done {
                finished.push(result.info.success);
                let i = workers.sampler.random_range(0..pool.len());
                let ep = pool.episode(i).clone();
                let scene = pool.scene(ep.scene_id)?.clone();
                workers.obs[e] = env.reset(scene, ep)?;
                workers.episode_index[e] = i;
                workers.starts[e] = true;
                next_hidden.data_mut()[e * h..(e + 1) * h].fill(0.0);
            } else {
                workers.obs[e] = result.observation;
                workers.starts[e] = false;
            }
        }
        workers.hidden = next_hidden;
    }
    let refs: Vec<&Observation> = workers.obs.iter().collect();
    let (_, values, _) = policy.act_step(&refs, &workers.hidden)?;
    buf.bootstrap = values.data().to_vec();
    Ok((buf, finished))
}
