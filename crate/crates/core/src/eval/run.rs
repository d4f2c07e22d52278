use std::sync::Arc;

use super::agents::Agent;
use super::metrics::{compute_metrics, oracle_cell_path, shortest_path_oracle, EpisodeResult, MetricsSummary, SplitLabel};
use crate::acoustics::{is_heard, SignatureSet};
use crate::env::Episode;
use crate::error::Result;
use crate::seed;
use crate::sim::{NavEnv, SensorConfig};
use crate::trainer::EpisodePool;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub heard: Option<MetricsSummary>,
    pub unheard: Option<MetricsSummary>,
    pub all: MetricsSummary,
    pub results: Vec<EpisodeResult>,
}

impl EvalReport {
    pub fn summaries(&self) -> Vec<MetricsSummary> {
        self.heard.iter().chain(&self.unheard).copied().chain(std::iter::once(self.all)).collect()
    }
}

/// Runs one episode to completion with `agent`.
pub fn run_episode(
    agent: &mut dyn Agent,
    pool: &EpisodePool,
    episode: &Episode,
    sigs: &Arc<SignatureSet>,
    sensors: SensorConfig,
    noise_seed: u64,
) -> Result<EpisodeResult> {
    let scene = pool.scene(episode.scene_id)?.clone();
    let (shortest, min_actions) = shortest_path_oracle(&scene, episode.start, episode.source)?;
    let oracle_path = oracle_cell_path(&scene, episode.start.cell(), episode.source)?;
    let mut env = NavEnv::new(scene, episode.clone(), sigs.clone(), sensors, seed::stream(noise_seed, "noise", 0))?;
    agent.begin(&env)?;
    let mut obs = env.observe()?;
    while !env.is_done() {
        let action = agent.act(&obs, &env)?;
        obs = env.step(action)?.observation;
    }
    Ok(EpisodeResult {
        scene_id: episode.scene_id,
        category: episode.category,
        success: env.succeeded(),
        path_length: env.path_length(),
        shortest_path: shortest,
        action_count: env.steps_taken(),
        min_actions,
        trajectory: env.trajectory().to_vec(),
        oracle_path,
    })
}

/// Runs every episode in the pool in order and summarizes by category split.
/// Episode `i` draws sensor noise from its own stream, so results do not
/// depend on evaluation order.
pub fn evaluate(
    agent: &mut dyn Agent,
    pool: &EpisodePool,
    sigs: &Arc<SignatureSet>,
    sensors: SensorConfig,
    seed_: u64,
) -> Result<EvalReport> {
    let mut results = Vec::with_capacity(pool.len());
    for (i, ep) in pool.episodes().iter().enumerate() {
        results.push(run_episode(agent, pool, ep, sigs, sensors, seed::derive(seed_, "eval-noise", i as u64))?);
    }
    let (heard, unheard): (Vec<EpisodeResult>, Vec<EpisodeResult>) =
        results.iter().cloned().partition(|r| is_heard(r.category));
    let summarize = |rs: &[EpisodeResult], label| (!rs.is_empty()).then(|| compute_metrics(rs, label)).transpose();
    Ok(EvalReport {
        heard: summarize(&heard, SplitLabel::Heard)?,
        unheard: summarize(&unheard, SplitLabel::Unheard)?,
        all: compute_metrics(&results, SplitLabel::All)?,
        results,
    })
}
