//! Stateful navigation environment producing depth and binaural observations.

use std::sync::Arc;

use crate::acoustics::{self, BinauralSpectrogram, SignatureSet};
use crate::env::{self, Action, AgentPose, DepthConfig, DistanceField, Episode, SceneGrid};
use crate::error::{Error, Result};
use crate::seed::Rng;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NoiseConfig {
    /// Audio signal-to-noise ratio; `None` disables audio noise.
    pub audio_snr_db: Option<f64>,
    /// Standard deviation of per-ray depth noise; 0 disables it.
    pub depth_stddev: f32,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensorConfig {
    pub depth: DepthConfig,
    pub ild: f32,
    pub noise: NoiseConfig,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            depth: DepthConfig::default(),
            ild: 0.8,
            noise: NoiseConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub depth: Vec<f32>,
    pub audio: BinauralSpectrogram,
    /// `None` at the first step of an episode.
    pub prev_action: Option<Action>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    pub geodesic_to_source: f64,
    pub success: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f32,
    pub done: bool,
    pub info: StepInfo,
}

/// Renders the observation at `pose` without noise.
pub fn observe_clean(
    scene: &SceneGrid,
    episode: &Episode,
    field: &DistanceField,
    sigs: &SignatureSet,
    sensors: &SensorConfig,
    pose: AgentPose,
    prev_action: Option<Action>,
) -> Result<Observation> {
    let (alpha, beta) = env::relative_angles(pose, episode);
    let distance = field.distance(pose.cell())?;
    let audio = acoustics::render(sigs.get(episode.category)?, distance, alpha, beta, sensors.ild);
    Ok(Observation {
        depth: env::depth_render(scene, pose, &sensors.depth),
        audio,
        prev_action,
    })
}

/// One episode in one scene. Must be stepped by a single caller at a time.
#[derive(Clone, Debug)]
pub struct NavEnv {
    scene: Arc<SceneGrid>,
    sigs: Arc<SignatureSet>,
    sensors: SensorConfig,
    episode: Episode,
    field: DistanceField,
    noise_rng: Rng,
    pose: AgentPose,
    step_index: u32,
    prev_action: Option<Action>,
    done: bool,
    success: bool,
    path_length: f64,
    trajectory: Vec<AgentPose>,
}

impl NavEnv {
    pub fn new(
        scene: Arc<SceneGrid>,
        episode: Episode,
        sigs: Arc<SignatureSet>,
        sensors: SensorConfig,
        noise_rng: Rng,
    ) -> Result<Self> {
        if episode.scene_id != scene.id {
            return Err(Error::InvalidArgument(format!(
                "episode belongs to scene {}, not {}",
                episode.scene_id, scene.id
            )));
        }
        sigs.get(episode.category)?;
        let field = scene.distance_field(episode.source)?;
        field.distance(episode.start.cell())?;
        Ok(Self {
            pose: episode.start,
            trajectory: vec![episode.start],
            scene,
            sigs,
            sensors,
            episode,
            field,
            noise_rng,
            step_index: 0,
            prev_action: None,
            done: false,
            success: false,
            path_length: 0.0,
        })
    }

    /// Starts a new episode, keeping sensors and the noise stream.
    pub fn reset(&mut self, scene: Arc<SceneGrid>, episode: Episode) -> Result<Observation> {
        let rng = self.noise_rng.clone();
        *self = NavEnv::new(scene, episode, self.sigs.clone(), self.sensors, rng)?;
        self.observe()
    }

    pub fn observe(&mut self) -> Result<Observation> {
        let mut obs = observe_clean(
            &self.scene,
            &self.episode,
            &self.field,
            &self.sigs,
            &self.sensors,
            self.pose,
            self.prev_action,
        )?;
        let noise = self.sensors.noise;
        if let Some(snr) = noise.audio_snr_db {
            obs.audio = acoustics::add_noise(&obs.audio, snr, &mut self.noise_rng)?;
        }
        if noise.depth_stddev > 0.0 {
            obs.depth = acoustics::add_depth_noise(
                &obs.depth,
                noise.depth_stddev,
                self.sensors.depth.max_depth as f32,
                &mut self.noise_rng,
            );
        }
        Ok(obs)
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        let (next, t) = env::step_with_field(&self.scene, &self.episode, &self.field, self.pose, self.step_index, action)?;
        if next.cell() != self.pose.cell() {
            self.path_length += env::SPACING;
        }
        self.pose = next;
        self.trajectory.push(next);
        self.step_index += 1;
        self.prev_action = Some(action);
        self.done = t.done;
        self.success = t.success;
        Ok(StepResult {
            observation: self.observe()?,
            reward: t.reward,
            done: t.done,
            info: StepInfo { geodesic_to_source: t.geodesic_to_source, success: t.success },
        })
    }

    pub fn scene(&self) -> &Arc<SceneGrid> {
        &self.scene
    }

    pub fn episode(&self) -> &Episode {
        &self.episode
    }

    pub fn pose(&self) -> AgentPose {
        self.pose
    }

    pub fn steps_taken(&self) -> u32 {
        self.step_index
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn succeeded(&self) -> bool {
        self.success
    }

    /// Distance travelled, counting one spacing per successful move.
    pub fn path_length(&self) -> f64 {
        self.path_length
    }

    /// Poses visited, starting with the initial pose.
    pub fn trajectory(&self) -> &[AgentPose] {
        &self.trajectory
    }

    pub fn at_source(&self) -> bool {
        self.pose.cell() == self.episode.source
    }

    pub fn relative_angles(&self) -> (f64, f64) {
        env::relative_angles(self.pose, &self.episode)
    }

    pub fn sensors(&self) -> &SensorConfig {
        &self.sensors
    }
}
