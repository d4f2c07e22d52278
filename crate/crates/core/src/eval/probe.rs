//! Linear-capacity check of how much category information survives in the
//! audio encoder: a fresh classifier is fit on frozen encoder features.

use rand::seq::SliceRandom;
use rand::Rng as _;

use avnav_tensor::{Optimizer, OptimizerKind, Tape, Tensor};

use crate::acoustics::{SignatureSet, NUM_HEARD};
use crate::env::{AgentPose, Episode, Heading, ELEVATIONS};
use crate::error::{Error, Result};
use crate::policy::{Policy, PolicyConfig, PolicyNet};
use crate::seed;
use crate::sim::{observe_clean, Observation, SensorConfig};
use crate::trainer::EpisodePool;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeConfig {
    pub samples: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f32,
    /// Fraction of samples used for fitting; the rest are held out.
    pub train_fraction: f64,
    /// Permute labels before fitting, as a control for memorization.
    pub shuffle_labels: bool,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            samples: 4000,
            epochs: 30,
            batch: 128,
            lr: 1e-3,
            train_fraction: 0.8,
            shuffle_labels: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeReport {
    /// Held-out accuracy.
    pub accuracy: f64,
    pub train_accuracy: f64,
    pub chance: f64,
    pub train_samples: usize,
    pub test_samples: usize,
}

fn sample_observations(
    pool: &EpisodePool,
    sigs: &SignatureSet,
    sensors: &SensorConfig,
    count: usize,
    rng: &mut seed::Rng,
) -> Result<(Vec<Observation>, Vec<usize>)> {
    let scenes: Vec<_> = pool.scenes().cloned().collect();
    let mut obs = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    while obs.len() < count {
        let scene = &scenes[rng.random_range(0..scenes.len())];
        let free = scene.free_cells();
        if free.len() < 2 {
            return Err(Error::EmptyInput("free cells for probe sampling"));
        }
        let source = free[rng.random_range(0..free.len())];
        let start = free[rng.random_range(0..free.len())];
        if start == source {
            continue;
        }
        let category = rng.random_range(0..NUM_HEARD);
        let episode = Episode {
            scene_id: scene.id,
            start: AgentPose { x: start.x, y: start.y, heading: Heading::ALL[rng.random_range(0..4)] },
            source,
            source_elevation: ELEVATIONS[rng.random_range(0..ELEVATIONS.len())],
            category,
            max_steps: 1,
        };
        let field = scene.distance_field(source)?;
        obs.push(observe_clean(scene, &episode, &field, sigs, sensors, episode.start, None)?);
        labels.push(category);
    }
    Ok((obs, labels))
}

fn features(policy: &Policy, obs: &[Observation]) -> Result<Vec<Vec<f32>>> {
    let mut out = Vec::with_capacity(obs.len());
    for chunk in obs.chunks(256) {
        let refs: Vec<&Observation> = chunk.iter().collect();
        let f = policy.audio_features(&refs)?;
        out.extend((0..f.rows()).map(|r| f.row_slice(r).to_vec()));
    }
    Ok(out)
}

/// Standardizes every column with statistics from the first `fit_rows` rows.
fn zscore(rows: &mut [Vec<f32>], fit_rows: usize) {
    let dim = rows[0].len();
    for j in 0..dim {
        let n = fit_rows as f64;
        let mean = rows[..fit_rows].iter().map(|r| f64::from(r[j])).sum::<f64>() / n;
        let var = rows[..fit_rows].iter().map(|r| (f64::from(r[j]) - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt().max(1e-6);
        for r in rows.iter_mut() {
            r[j] = ((f64::from(r[j]) - mean) / std) as f32;
        }
    }
}

fn accuracy(net: &PolicyNet, store: &avnav_tensor::ParamStore, x: &[Vec<f32>], y: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let input = tape.constant(Tensor::from_rows(x)?)?;
    let logits = net.classify_plain(&mut tape, store, input)?;
    let logits = tape.value(logits);
    let correct = (0..logits.rows())
        .filter(|&i| {
            let row = logits.row_slice(i);
            let best = (0..row.len()).fold(0, |b, k| if row[k] > row[b] { k } else { b });
            best == y[i]
        })
        .count();
    Ok(correct as f64 / y.len() as f64)
}

/// Fits a fresh classifier head on the policy's frozen audio features for
/// random placements of heard-category sources, and reports held-out accuracy.
pub fn probe_semantic_leakage(
    policy: &Policy,
    pool: &EpisodePool,
    sigs: &SignatureSet,
    sensors: &SensorConfig,
    cfg: &ProbeConfig,
) -> Result<ProbeReport> {
    let train_n = (cfg.samples as f64 * cfg.train_fraction).round() as usize;
    if train_n < NUM_HEARD || cfg.samples - train_n < NUM_HEARD || cfg.batch == 0 {
        return Err(Error::InvalidArgument(format!(
            "probe needs at least {NUM_HEARD} training and test samples, got {} of {}",
            train_n, cfg.samples
        )));
    }
    let mut rng = seed::stream(cfg.seed, "probe", 0);
    let (obs, mut labels) = sample_observations(pool, sigs, sensors, cfg.samples, &mut rng)?;
    if cfg.shuffle_labels {
        labels.shuffle(&mut rng);
    }
    let mut x = features(policy, &obs)?;
    zscore(&mut x, train_n);
    let (x_train, x_test) = x.split_at(train_n);
    let (y_train, y_test) = labels.split_at(train_n);

    let head_cfg = PolicyConfig { classes: NUM_HEARD, ..*policy.cfg() };
    let (net, mut store) = PolicyNet::init(head_cfg, &mut seed::stream(cfg.seed, "probe-init", 0));
    let mut opt = Optimizer::new(OptimizerKind::adam(), cfg.lr, &store);
    let mut order: Vec<usize> = (0..train_n).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(cfg.batch) {
            let rows: Vec<Vec<f32>> = idx.iter().map(|&i| x_train[i].clone()).collect();
            let ys: Vec<usize> = idx.iter().map(|&i| y_train[i]).collect();
            let grads = {
                let mut tape = Tape::new();
                let input = tape.constant(Tensor::from_rows(&rows)?)?;
                let logits = net.classify_plain(&mut tape, &store, input)?;
                let loss = tape.cross_entropy(logits, &ys)?;
                tape.backward(loss)?
            };
            store.zero_grad();
            store.accumulate(&grads);
            opt.step(&mut store)?;
        }
    }
    Ok(ProbeReport {
        accuracy: accuracy(&net, &store, x_test, y_test)?,
        train_accuracy: accuracy(&net, &store, x_train, y_train)?,
        chance: 1.0 / NUM_HEARD as f64,
        train_samples: train_n,
        test_samples: y_test.len(),
    })
}
