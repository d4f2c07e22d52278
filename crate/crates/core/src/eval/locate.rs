//! Supervised check of the direction head: the encoders, recurrent core and
//! locator are fit on the direction loss alone, with no reinforcement signal.

use rand::seq::SliceRandom;
use rand::Rng as _;

use avnav_tensor::{Optimizer, OptimizerKind, Tape, Tensor};

use crate::acoustics::{SignatureSet, NUM_HEARD};
use crate::env::{relative_angles, Action, AgentPose, Episode, Heading, ELEVATIONS};
use crate::error::{Error, Result};
use crate::policy::{decode_angle, encode_observations, Heads, PolicyConfig, PolicyNet, SeqInput, ANGLE_DIM};
use crate::seed;
use crate::sim::{observe_clean, SensorConfig};
use crate::trainer::EpisodePool;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocatorFitConfig {
    pub train_samples: usize,
    pub test_samples: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f32,
    pub seed: u64,
}

impl Default for LocatorFitConfig {
    fn default() -> Self {
        Self { train_samples: 50_000, test_samples: 2_000, epochs: 5, batch: 256, lr: 1e-3, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocatorReport {
    /// Median absolute yaw error on held-out samples, in degrees.
    pub median_yaw_error_deg: f64,
    pub final_train_loss: f64,
}

/// Two-step samples: an observation at a random pose, then one after a
/// random turn. The target is the direction after the turn.
struct Samples {
    audio: Vec<Tensor>,
    depth: Vec<Tensor>,
    prev: Vec<Tensor>,
    targets: Vec<[f32; ANGLE_DIM]>,
}

impl Samples {
    fn len(&self) -> usize {
        self.targets.len()
    }
}

fn sample(
    cfg: &PolicyConfig,
    pool: &EpisodePool,
    sigs: &SignatureSet,
    sensors: &SensorConfig,
    count: usize,
    rng: &mut seed::Rng,
) -> Result<Samples> {
    let scenes: Vec<_> = pool.scenes().cloned().collect();
    let mut out = Samples { audio: Vec::new(), depth: Vec::new(), prev: Vec::new(), targets: Vec::new() };
    while out.len() < count {
        let scene = &scenes[rng.random_range(0..scenes.len())];
        let free = scene.free_cells();
        let (source, cell) = (free[rng.random_range(0..free.len())], free[rng.random_range(0..free.len())]);
        if source == cell {
            continue;
        }
        let first = AgentPose { x: cell.x, y: cell.y, heading: Heading::ALL[rng.random_range(0..4)] };
        let turn = if rng.random_bool(0.5) { Action::TurnLeft } else { Action::TurnRight };
        let heading = if turn == Action::TurnLeft { first.heading.left() } else { first.heading.right() };
        let second = AgentPose { heading, ..first };
        let episode = Episode {
            scene_id: scene.id,
            start: first,
            source,
            source_elevation: ELEVATIONS[rng.random_range(0..ELEVATIONS.len())],
            category: rng.random_range(0..NUM_HEARD),
            max_steps: 2,
        };
        let field = scene.distance_field(source)?;
        let o0 = observe_clean(scene, &episode, &field, sigs, sensors, first, None)?;
        let o1 = observe_clean(scene, &episode, &field, sigs, sensors, second, Some(turn))?;
        let (audio, depth, prev) = encode_observations(cfg, &[&o0, &o1])?;
        let (alpha, beta) = relative_angles(second, &episode);
        out.audio.push(audio);
        out.depth.push(depth);
        out.prev.push(prev);
        out.targets.push([alpha.sin() as f32, alpha.cos() as f32, beta.sin() as f32, beta.cos() as f32]);
    }
    Ok(out)
}

/// Step-major two-step input for the samples at `idx`.
fn batch_input(net: &PolicyNet, s: &Samples, idx: &[usize]) -> Result<SeqInput> {
    let b = idx.len();
    let mut audio = Vec::new();
    let mut depth = Vec::new();
    let mut prev = Vec::new();
    for step in 0..2 {
        for &i in idx {
            audio.extend_from_slice(s.audio[i].row_slice(step));
            depth.extend_from_slice(s.depth[i].row_slice(step));
            prev.extend_from_slice(s.prev[i].row_slice(step));
        }
    }
    Ok(SeqInput {
        steps: 2,
        batch: b,
        audio: Tensor::new(&[2 * b, s.audio[0].cols()], audio)?,
        depth: Tensor::new(&[2 * b, s.depth[0].cols()], depth)?,
        prev_action: Tensor::new(&[2 * b, Action::COUNT], prev)?,
        starts: vec![false; 2 * b],
        h0: net.zero_hidden(b),
    })
}

fn wrap(a: f64) -> f64 {
    let w = a.rem_euclid(std::f64::consts::TAU);
    if w > std::f64::consts::PI {
        w - std::f64::consts::TAU
    } else {
        w
    }
}

/// Fits a freshly initialized network on the direction loss only and reports
/// the held-out median yaw error.
pub fn fit_locator(
    policy_cfg: &PolicyConfig,
    pool: &EpisodePool,
    sigs: &SignatureSet,
    sensors: &SensorConfig,
    cfg: &LocatorFitConfig,
) -> Result<LocatorReport> {
    if cfg.train_samples == 0 || cfg.test_samples == 0 || cfg.batch == 0 {
        return Err(Error::InvalidArgument("locator fit needs nonzero sample counts and batch".into()));
    }
    let mut rng = seed::stream(cfg.seed, "locator-fit", 0);
    let train = sample(policy_cfg, pool, sigs, sensors, cfg.train_samples, &mut rng)?;
    let test = sample(policy_cfg, pool, sigs, sensors, cfg.test_samples, &mut rng)?;
    let (net, mut store) = PolicyNet::init(*policy_cfg, &mut seed::stream(cfg.seed, "policy-init", 0));
    let mut opt = Optimizer::new(OptimizerKind::adam(), cfg.lr, &store);
    let heads = Heads { classifier: false, locator: true, lambda: 0.0 };

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut last_loss = f64::NAN;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut n) = (0.0, 0);
        for idx in order.chunks(cfg.batch) {
            let input = batch_input(&net, &train, idx)?;
            let b = idx.len();
            let target: Vec<f32> = idx.iter().flat_map(|&i| train.targets[i]).collect();
            let grads = {
                let mut tape = Tape::new();
                let v = net.forward_seq(&mut tape, &store, &input, heads)?;
                let pred = v.angle_pred.ok_or(Error::EmptyInput("direction head output"))?;
                let last = tape.slice_rows(pred, b, 2 * b)?;
                let target = tape.constant(Tensor::new(&[b, ANGLE_DIM], target)?)?;
                let loss = tape.mse(last, target)?;
                sum += f64::from(tape.value(loss).item()?);
                n += 1;
                tape.backward(loss)?
            };
            store.zero_grad();
            store.accumulate(&grads);
            opt.step(&mut store)?;
        }
        last_loss = sum / n as f64;
    }

    let mut errors = Vec::with_capacity(test.len());
    let all: Vec<usize> = (0..test.len()).collect();
    for idx in all.chunks(cfg.batch) {
        let input = batch_input(&net, &test, idx)?;
        let b = idx.len();
        let mut tape = Tape::new();
        let v = net.forward_seq(&mut tape, &store, &input, heads)?;
        let pred = v.angle_pred.ok_or(Error::EmptyInput("direction head output"))?;
        let pred = tape.value(pred);
        for (k, &i) in idx.iter().enumerate() {
            let row = pred.row_slice(b + k);
            let t = test.targets[i];
            let est = decode_angle(f64::from(row[0]), f64::from(row[1]))?;
            let truth = f64::from(t[0]).atan2(f64::from(t[1]));
            errors.push(wrap(est - truth).abs().to_degrees());
        }
    }
    errors.sort_by(f64::total_cmp);
    Ok(LocatorReport { median_yaw_error_deg: errors[errors.len() / 2], final_train_loss: last_loss })
}
