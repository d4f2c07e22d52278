use crate::env::AgentPose;
use crate::policy::ANGLE_DIM;

/// Transitions from `steps` consecutive steps of `envs` parallel
/// environments. Row `t * envs + e` holds step `t` of environment `e`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutBuffer {
    pub steps: usize,
    pub envs: usize,
    pub audio_dim: usize,
    pub rays: usize,
    pub hidden_dim: usize,
    /// Encoded network inputs, one row per transition.
    pub audio: Vec<f32>,
    pub depth: Vec<f32>,
    pub prev_action: Vec<f32>,
    /// Recurrent state fed into the step (already zeroed at episode starts).
    pub hidden: Vec<f32>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f32>,
    pub values: Vec<f32>,
    pub rewards: Vec<f32>,
    pub dones: Vec<bool>,
    /// The observation is the first of its episode.
    pub starts: Vec<bool>,
    pub categories: Vec<usize>,
    /// Ground-truth (sin yaw, cos yaw, sin pitch, cos pitch).
    pub angles: Vec<[f32; ANGLE_DIM]>,
    pub at_source: Vec<bool>,
    pub poses: Vec<AgentPose>,
    /// Index into the episode pool.
    pub episodes: Vec<usize>,
    /// Critic estimate for the observation after the final step of each env.
    pub bootstrap: Vec<f32>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.steps * self.envs
    }

    pub fn row(&self, t: usize, env: usize) -> usize {
        t * self.envs + env
    }
}

/// Generalized advantage estimates and returns (advantage + value), without
/// normalization. A done step never bootstraps from its successor.
pub fn gae_advantages(buf: &RolloutBuffer, gamma: f64, lambda: f64) -> (Vec<f32>, Vec<f32>) {
    let (steps, envs) = (buf.steps, buf.envs);
    let mut adv = vec![0.0f32; steps * envs];
    let mut ret = vec![0.0f32; steps * envs];
    for e in 0..envs {
        let mut running = 0.0f64;
        for t in (0..steps).rev() {
            let i = buf.row(t, e);
            let next_value = if t + 1 < steps { buf.values[buf.row(t + 1, e)] } else { buf.bootstrap[e] };
            let live = if buf.dones[i] { 0.0 } else { 1.0 };
            let delta = f64::from(buf.rewards[i]) + gamma * f64::from(next_value) * live - f64::from(buf.values[i]);
            running = delta + gamma * lambda * live * running;
            adv[i] = running as f32;
            ret[i] = (running + f64::from(buf.values[i])) as f32;
        }
    }
    (adv, ret)
}

/// Shifts and scales to zero mean and unit standard deviation.
pub fn normalize(x: &[f32]) -> Vec<f32> {
    let n = x.len().max(1) as f64;
    let mean = x.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let var = x.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    x.iter().map(|&v| ((f64::from(v) - mean) / std) as f32).collect()
}
