use std::fs;
use std::sync::Arc;

use avnav::acoustics::{heard_categories, SignatureSet, NUM_CATEGORIES};
use avnav::env::{generate_episodes, generate_scene, relative_angles, Action, MAX_STEPS};
use avnav::policy::{lambda_schedule, Heads, ParamGroup, Policy, PolicyConfig};
use avnav::seed;
use avnav::sim::SensorConfig;
use avnav::trainer::{
    build_loss, collect_rollout, gae_advantages, minibatch_gradients, normalize, ppo_update, train, Ablation, Batch,
    EpisodePool, PpoConfig, RolloutBuffer, TrainOptions, Workers,
};
use avnav_tensor::{Optimizer, OptimizerKind, ParamStore, Tape, Var};
use rand::seq::SliceRandom;
use rand::Rng as _;

fn small_cfg() -> PolicyConfig {
    PolicyConfig {
        audio_hidden: 32,
        audio_out: 16,
        visual_hidden: 16,
        visual_out: 8,
        hidden: 24,
        head_hidden: 16,
        ..PolicyConfig::default()
    }
}

fn pool(seed_: u64) -> EpisodePool {
    let mut scenes = Vec::new();
    let mut episodes = Vec::new();
    for i in 0..2u32 {
        let mut s = generate_scene(seed_ * 10 + u64::from(i), 12, 12, 2).unwrap();
        s.id = i;
        episodes.extend(generate_episodes(&s, 6, seed_, &heard_categories()).unwrap());
        scenes.push(s);
    }
    EpisodePool::new(scenes, episodes).unwrap()
}

fn sigs() -> Arc<SignatureSet> {
    Arc::new(SignatureSet::generate(4, NUM_CATEGORIES, 8, 8).unwrap())
}

fn rollout(policy: &Policy, pool: &EpisodePool, envs: usize, len: usize, seed_: u64) -> RolloutBuffer {
    let mut w = Workers::new(pool, sigs(), SensorConfig::default(), envs, policy.cfg().hidden, seed_).unwrap();
    collect_rollout(policy, &mut w, pool, len, &mut seed::stream(seed_, "rollout", 0)).unwrap().0
}

fn policy(seed_: u64) -> Policy {
    Policy::new(small_cfg(), &mut seed::stream(seed_, "policy-init", 0))
}

/// Recursive definition of the advantage at `(t, e)`.
fn advantage_oracle(buf: &RolloutBuffer, gamma: f64, lambda: f64, t: usize, e: usize) -> f64 {
    let i = buf.row(t, e);
    let v = f64::from(buf.values[i]);
    let r = f64::from(buf.rewards[i]);
    if buf.dones[i] {
        return r - v;
    }
    let next_v = if t + 1 == buf.steps { f64::from(buf.bootstrap[e]) } else { f64::from(buf.values[buf.row(t + 1, e)]) };
    let rest = if t + 1 == buf.steps { 0.0 } else { advantage_oracle(buf, gamma, lambda, t + 1, e) };
    r + gamma * next_v - v + gamma * lambda * rest
}

#[test]
fn gae_matches_recursive_oracle() {
    let mut rng = seed::stream(3, "test", 0);
    for _ in 0..20 {
        let (steps, envs) = (10, 3);
        let n = steps * envs;
        let buf = RolloutBuffer {
            steps,
            envs,
            rewards: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
            values: (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
            dones: (0..n).map(|_| rng.random_bool(0.2)).collect(),
            bootstrap: (0..envs).map(|_| rng.random_range(-2.0..2.0)).collect(),
            ..RolloutBuffer::default()
        };
        let (gamma, lambda) = (rng.random_range(0.8..1.0), rng.random_range(0.5..1.0));
        let (adv, ret) = gae_advantages(&buf, gamma, lambda);
        for t in 0..steps {
            for e in 0..envs {
                let i = buf.row(t, e);
                let want = advantage_oracle(&buf, gamma, lambda, t, e);
                assert!((f64::from(adv[i]) - want).abs() < 1e-5, "t={t} e={e}: {} vs {want}", adv[i]);
                assert!((ret[i] - (adv[i] + buf.values[i])).abs() < 1e-5);
            }
        }
        let z = normalize(&adv);
        let mean = z.iter().map(|&x| f64::from(x)).sum::<f64>() / n as f64;
        let var = z.iter().map(|&x| (f64::from(x) - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-4);
    }
}

#[test]
fn gae_telescopes_without_discount() {
    let buf = RolloutBuffer {
        steps: 4,
        envs: 1,
        rewards: vec![1.0, -0.5, 2.0, 0.25],
        values: vec![0.3, -0.1, 0.7, 0.2],
        dones: vec![false, false, false, true],
        bootstrap: vec![5.0],
        ..RolloutBuffer::default()
    };
    let (adv, _) = gae_advantages(&buf, 1.0, 1.0);
    let rewards = [1.0f32, -0.5, 2.0, 0.25];
    for t in 0..4 {
        let tail: f32 = rewards[t..].iter().sum();
        assert!((adv[t] - (tail - buf.values[t])).abs() < 1e-6);
    }
    let zero = RolloutBuffer { rewards: vec![0.0; 4], values: vec![0.0; 4], bootstrap: vec![0.0], ..buf };
    assert!(gae_advantages(&zero, 0.99, 0.95).0.iter().all(|&a| a == 0.0));
}

#[test]
fn single_transition_rollout() {
    let p = policy(1);
    let buf = rollout(&p, &pool(1), 1, 1, 0);
    assert_eq!((buf.len(), buf.capacity()), (1, 1));
    assert_eq!(buf.bootstrap.len(), 1);
}

#[test]
fn all_stop_policy_ends_every_episode_at_once() {
    let mut p = Policy::zeros(small_cfg());
    // Only the Stop logit is nonzero.
    let bias = p.store.find("actor.b").unwrap();
    let mut b = p.store.value(bias).clone();
    b.data_mut()[Action::Stop.index()] = 50.0;
    p.store.set_value(bias, b).unwrap();
    let pool = pool(2);
    let mut w = Workers::new(&pool, sigs(), SensorConfig::default(), 3, p.cfg().hidden, 0).unwrap();
    let (buf, finished) = collect_rollout(&p, &mut w, &pool, 10, &mut seed::stream(0, "rollout", 0)).unwrap();
    assert_eq!(finished.len(), 30);
    assert!(finished.iter().all(|&s| !s));
    assert!(buf.dones.iter().all(|&d| d));
    assert!(buf.starts.iter().all(|&s| s));
    assert!(buf.rewards.iter().all(|&r| (r + 0.01).abs() < 1e-7));
}

#[test]
fn recorded_angles_match_poses() {
    let p = policy(2);
    let pool = pool(3);
    let buf = rollout(&p, &pool, 4, 40, 1);
    for i in 0..buf.len() {
        let ep = pool.episode(buf.episodes[i]);
        let (alpha, beta) = relative_angles(buf.poses[i], ep);
        let want = [alpha.sin() as f32, alpha.cos() as f32, beta.sin() as f32, beta.cos() as f32];
        assert_eq!(buf.angles[i], want);
        assert_eq!(buf.at_source[i], buf.poses[i].cell() == ep.source);
        assert_eq!(buf.categories[i], ep.category);
    }
}

fn whole_batch(p: &Policy, buf: &RolloutBuffer) -> Batch {
    let (adv, ret) = gae_advantages(buf, 0.99, 0.95);
    Batch::whole(buf, &normalize(&adv), &ret, p.cfg().classes).unwrap()
}

fn sgd_cfg(lr: f32) -> PpoConfig {
    PpoConfig {
        optimizer: OptimizerKind::Sgd,
        lr,
        max_grad_norm: None,
        epochs: 1,
        minibatches: 1,
        ..PpoConfig::default()
    }
}

/// Gradients of the classifier loss alone, with the reversal layer set to
/// the identity so they are the true derivatives.
fn classifier_loss_grads(p: &Policy, batch: &Batch) -> avnav_tensor::Gradients {
    let mut tape = Tape::new();
    let heads = Heads { classifier: true, locator: false, lambda: -1.0 };
    let v = p.net.forward_seq(&mut tape, &p.store, &batch.input, heads).unwrap();
    let logits = tape.gather_rows(v.class_logits.unwrap(), &batch.class_rows).unwrap();
    let loss = tape.cross_entropy(logits, &batch.class_labels).unwrap();
    tape.backward(loss).unwrap()
}

#[test]
fn plain_gradient_step_realizes_reversed_update() {
    let mut p = policy(4);
    let buf = rollout(&p, &pool(4), 2, 16, 2);
    let batch = whole_batch(&p, &buf);
    let (lr, lambda) = (0.05f32, 0.6f32);
    let cfg = sgd_cfg(lr);

    let others = minibatch_gradients(&p, &batch, &PpoConfig { class_weight: 0.0, ..cfg }, lambda).unwrap().0;
    let class = classifier_loss_grads(&p, &batch);
    let before = p.store.clone();

    let (grads, _) = minibatch_gradients(&p, &batch, &cfg, lambda).unwrap();
    let mut opt = Optimizer::new(OptimizerKind::Sgd, lr, &p.store);
    p.store.zero_grad();
    p.store.accumulate(&grads);
    opt.step(&mut p.store).unwrap();

    let mut checked = [0usize; 3];
    for (id, param) in before.iter() {
        let group = p.net.group_of(&before, id).unwrap();
        let zeros = vec![0.0; param.value.numel()];
        let go = others.param(id).unwrap_or(&zeros);
        let gc = class.param(id).unwrap_or(&zeros);
        for (k, &theta) in param.value.data().iter().enumerate() {
            let (go, gc) = (f64::from(go[k]), f64::from(gc[k]));
            let step = match group {
                ParamGroup::AudioClassifier => {
                    checked[0] += 1;
                    assert_eq!(go, 0.0);
                    gc
                }
                ParamGroup::AudioEncoder => {
                    checked[1] += 1;
                    go - f64::from(lambda) * gc
                }
                _ => {
                    checked[2] += 1;
                    assert_eq!(gc, 0.0);
                    go
                }
            };
            let want = f64::from(theta) - f64::from(lr) * step;
            let got = f64::from(p.store.value(id).data()[k]);
            // Rounding of the parameter and of each gradient contribution.
            let scale = f64::from(theta).abs() + f64::from(lr) * (go.abs() + f64::from(lambda) * gc.abs());
            let tol = 4.0 * f64::from(f32::EPSILON) * scale.max(1e-30);
            assert!((got - want).abs() <= tol, "{} [{k}]: got {got}, want {want}", param.name);
        }
    }
    assert!(checked.iter().all(|&c| c > 0));
}

/// Clipped PPO with value and entropy terms and nothing else.
fn reference_loss<'p>(tape: &mut Tape<'p>, p: &'p Policy, batch: &Batch, cfg: &PpoConfig) -> Var {
    let v = p.net.forward_seq(tape, &p.store, &batch.input, Heads::NONE).unwrap();
    let rows = batch.rows() as f32;
    let log_all = tape.log_softmax(v.logits).unwrap();
    let logp = tape.pick(log_all, &batch.actions).unwrap();
    let old = tape.constant(batch.old_log_probs.clone()).unwrap();
    let adv = tape.constant(batch.advantages.clone()).unwrap();
    let diff = tape.sub(logp, old).unwrap();
    let ratio = tape.exp(diff).unwrap();
    let unclipped = tape.mul(ratio, adv).unwrap();
    let clipped = tape.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip).unwrap();
    let clipped = tape.mul(clipped, adv).unwrap();
    let surrogate = tape.minimum(unclipped, clipped).unwrap();
    let surrogate = tape.mean(surrogate).unwrap();
    let policy = tape.scale(surrogate, -1.0).unwrap();
    let ret = tape.constant(batch.returns.clone()).unwrap();
    let value = tape.mse(v.value, ret).unwrap();
    let probs = tape.softmax(v.logits).unwrap();
    let plogp = tape.mul(probs, log_all).unwrap();
    let entropy = tape.sum(plogp).unwrap();
    let entropy = tape.scale(entropy, -1.0 / rows).unwrap();
    let value = tape.scale(value, cfg.value_coef).unwrap();
    let entropy = tape.scale(entropy, -cfg.entropy_coef).unwrap();
    let total = tape.add(policy, value).unwrap();
    tape.add(total, entropy).unwrap()
}

fn bits(store: &ParamStore) -> Vec<u32> {
    store.iter().flat_map(|(_, p)| p.value.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect()
}

#[test]
fn zero_auxiliary_weights_match_plain_ppo_bitwise() {
    let start = policy(5);
    let buf = rollout(&start, &pool(5), 2, 32, 3);
    let cfg = PpoConfig { class_weight: 0.0, locate_weight: 0.0, epochs: 2, minibatches: 2, ..PpoConfig::default() };

    let mut a = start.clone();
    let mut opt_a = Optimizer::new(cfg.optimizer, cfg.lr, &a.store).with_max_grad_norm(cfg.max_grad_norm);
    ppo_update(&mut a, &mut opt_a, &buf, &cfg, 0.7, &mut seed::stream(0, "minibatch", 0), 0).unwrap();

    let mut b = start.clone();
    let mut opt_b = Optimizer::new(cfg.optimizer, cfg.lr, &b.store).with_max_grad_norm(cfg.max_grad_norm);
    let (adv, ret) = gae_advantages(&buf, cfg.gamma, cfg.gae_lambda);
    let adv = normalize(&adv);
    let per_env = buf.steps / cfg.bptt_len;
    let mut chunks: Vec<(usize, usize)> = (0..buf.envs).flat_map(|e| (0..per_env).map(move |c| (e, c))).collect();
    let mut rng = seed::stream(0, "minibatch", 0);
    for _ in 0..cfg.epochs {
        chunks.shuffle(&mut rng);
        for m in 0..cfg.minibatches {
            let (lo, hi) = (m * chunks.len() / cfg.minibatches, (m + 1) * chunks.len() / cfg.minibatches);
            let batch = Batch::from_chunks(&buf, &chunks[lo..hi], cfg.bptt_len, &adv, &ret, b.cfg().classes).unwrap();
            let grads = {
                let mut tape = Tape::new();
                let loss = reference_loss(&mut tape, &b, &batch, &cfg);
                tape.backward(loss).unwrap()
            };
            b.store.zero_grad();
            b.store.accumulate(&grads);
            opt_b.step(&mut b.store).unwrap();
        }
    }
    assert_eq!(bits(&a.store), bits(&b.store));
    assert_ne!(bits(&a.store), bits(&start.store));
}

#[test]
fn disabling_the_classifier_leaves_locator_gradients() {
    let p = policy(6);
    let buf = rollout(&p, &pool(6), 2, 16, 4);
    let batch = whole_batch(&p, &buf);
    let full = PpoConfig::default().with_ablation(Ablation::Full);
    let no_ac = PpoConfig::default().with_ablation(Ablation::NoAc);
    assert_eq!((no_ac.class_weight, no_ac.locate_weight), (0.0, 1.0));
    let g_full = minibatch_gradients(&p, &batch, &full, 0.0).unwrap().0;
    let g_no_ac = minibatch_gradients(&p, &batch, &no_ac, 0.0).unwrap().0;
    for id in p.net.group_ids(&p.store, ParamGroup::LocationPredictor) {
        assert_eq!(g_full.param(id).unwrap(), g_no_ac.param(id).unwrap());
    }
    // At zero reversal strength the classifier does not reach the encoder.
    for id in p.net.group_ids(&p.store, ParamGroup::AudioEncoder) {
        let (a, b) = (g_full.param(id).unwrap(), g_no_ac.param(id).unwrap());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= 1e-6 * x.abs().max(y.abs()).max(1e-3));
        }
    }
    assert!(g_no_ac.param(p.net.group_ids(&p.store, ParamGroup::AudioClassifier)[0]).is_none());
}

#[test]
fn auxiliary_losses_do_not_change_trajectories() {
    let p = policy(7);
    let pool = pool(7);
    let buf = rollout(&p, &pool, 2, 30, 5);
    let batch = whole_batch(&p, &buf);
    for mode in Ablation::ALL {
        let cfg = PpoConfig::default().with_ablation(mode);
        let mut tape = Tape::new();
        build_loss(&mut tape, &p.net, &p.store, &batch, &cfg, 0.5).unwrap();
    }
    let again = rollout(&p, &pool, 2, 30, 5);
    assert_eq!(buf, again);
}

fn options(dir: &std::path::Path, total: u64, steps: Option<u64>, ablation: Ablation) -> TrainOptions {
    TrainOptions {
        ppo: PpoConfig { total_episodes: total, rollout_len: 32, num_envs: 2, seed: 9, ..PpoConfig::default() },
        ablation,
        policy: small_cfg(),
        sensors: SensorConfig::default(),
        out_dir: dir.to_path_buf(),
        checkpoint_every: 2,
        max_env_steps: steps,
        resume: None,
    }
}

#[test]
fn zero_budget_writes_only_the_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = train(&options(dir.path(), 0, None, Ablation::Full), &pool(8), sigs()).unwrap();
    assert_eq!(out.checkpoints.len(), 1);
    assert_eq!(out.state.updates, 0);
    let log = fs::read_to_string(&out.log_path).unwrap();
    assert_eq!(log.lines().count(), 1);
}

#[test]
fn training_is_deterministic_and_lambda_is_monotone() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let a = train(&options(d1.path(), 400, Some(640), Ablation::Full), &pool(9), sigs()).unwrap();
    let b = train(&options(d2.path(), 400, Some(640), Ablation::Full), &pool(9), sigs()).unwrap();
    let log_a = fs::read_to_string(&a.log_path).unwrap();
    assert_eq!(log_a, fs::read_to_string(&b.log_path).unwrap());
    assert_eq!(a.checkpoints.len(), b.checkpoints.len());
    for (x, y) in a.checkpoints.iter().zip(&b.checkpoints) {
        for ext in ["manifest", "bin"] {
            assert_eq!(fs::read(x.with_extension(ext)).unwrap(), fs::read(y.with_extension(ext)).unwrap());
        }
    }
    let rows: Vec<Vec<f64>> = log_a
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|f| f.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 10);
    for pair in rows.windows(2) {
        assert!(pair[1][3] >= pair[0][3], "lambda decreased");
        assert!(pair[1][2] >= pair[0][2], "episode count decreased");
    }
    for r in &rows {
        let want = lambda_schedule(r[2] as u64, 400, 1.0).unwrap();
        assert!((r[3] - want).abs() < 1e-7);
    }
}

#[test]
fn resume_continues_the_episode_count() {
    let dir = tempfile::tempdir().unwrap();
    let first = train(&options(dir.path(), 10_000, Some(256), Ablation::NoLp), &pool(10), sigs()).unwrap();
    let stem = first.checkpoints.last().unwrap().clone();
    let mut opts = options(dir.path(), 10_000, Some(512), Ablation::NoLp);
    opts.resume = Some(stem);
    let second = train(&opts, &pool(10), sigs()).unwrap();
    assert_eq!(second.state.updates, 8);
    assert!(second.state.n >= first.state.n);
    let log = fs::read_to_string(&second.log_path).unwrap();
    let n_col: Vec<u64> = log.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert_eq!(n_col.len(), 8);
    assert!(n_col.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn episodes_never_exceed_the_step_budget() {
    let p = policy(11);
    let pool = pool(11);
    let buf = rollout(&p, &pool, 2, 400, 6);
    for e in 0..buf.envs {
        let mut len = 0;
        for t in 0..buf.steps {
            let i = buf.row(t, e);
            if buf.starts[i] {
                len = 0;
            }
            len += 1;
            assert!(len <= MAX_STEPS as usize);
        }
    }
}

#[test]
fn config_validation_and_ablation_parsing() {
    assert!(PpoConfig { gamma: 0.0, ..PpoConfig::default() }.validate().is_err());
    assert!(PpoConfig { gae_lambda: 1.5, ..PpoConfig::default() }.validate().is_err());
    assert!(PpoConfig { clip: 0.0, ..PpoConfig::default() }.validate().is_err());
    assert!(PpoConfig { bptt_len: 7, ..PpoConfig::default() }.validate().is_err());
    assert!(PpoConfig::default().validate().is_ok());
    for mode in Ablation::ALL {
        assert_eq!(mode.as_str().parse::<Ablation>().unwrap(), mode);
    }
    assert!("both".parse::<Ablation>().is_err());
    let none = PpoConfig::default().with_ablation(Ablation::None);
    assert_eq!((none.class_weight, none.locate_weight), (0.0, 0.0));
}
