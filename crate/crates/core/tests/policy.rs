use std::sync::Arc;

use avnav::acoustics::SignatureSet;
use avnav::env::{generate_episodes, generate_scene, Action};
use avnav::policy::{encode_observations, Heads, ParamGroup, Policy, PolicyConfig, SeqInput};
use avnav::seed;
use avnav::sim::{NavEnv, Observation, SensorConfig};
use avnav_tensor::gradcheck::{check_params, GradCheckConfig};
use avnav_tensor::{ParamStore, Tape, Tensor, Var};
use rand::Rng as _;

fn tiny_cfg() -> PolicyConfig {
    PolicyConfig {
        bins: 4,
        frames: 4,
        rays: 5,
        max_depth: 10.0,
        classes: 3,
        audio_hidden: 6,
        audio_out: 5,
        visual_hidden: 4,
        visual_out: 3,
        hidden: 6,
        head_hidden: 5,
    }
}

/// A few observations from a real environment, rendered at the policy's sizes.
fn observations(cfg: &PolicyConfig, n: usize, seed_: u64) -> Vec<Observation> {
    let scene = Arc::new(generate_scene(seed_, 12, 12, 2).unwrap());
    let eps = generate_episodes(&scene, n, seed_, &[0, 1, 2]).unwrap();
    let sigs = Arc::new(SignatureSet::generate(1, 12, cfg.bins, cfg.frames).unwrap());
    let mut sensors = SensorConfig::default();
    sensors.depth.rays = cfg.rays;
    let mut rng = seed::stream(seed_, "rollout", 0);
    eps.into_iter()
        .map(|e| {
            let mut env = NavEnv::new(scene.clone(), e, sigs.clone(), sensors, seed::stream(0, "noise", 0)).unwrap();
            let a = Action::from_index(rng.random_range(0..3)).unwrap();
            env.step(a).unwrap().observation
        })
        .collect()
}

fn seq_input(cfg: &PolicyConfig, steps: usize, batch: usize, seed_: u64) -> SeqInput {
    let obs = observations(cfg, steps * batch, seed_);
    let refs: Vec<&Observation> = obs.iter().collect();
    let (audio, depth, prev_action) = encode_observations(cfg, &refs).unwrap();
    let mut rng = seed::stream(seed_, "h0", 0);
    let h0 = (0..batch * cfg.hidden).map(|_| rng.random_range(-0.5f32..0.5)).collect();
    let mut starts = vec![false; steps * batch];
    if steps > 1 {
        starts[batch] = true;
    }
    SeqInput { steps, batch, audio, depth, prev_action, starts, h0: Tensor::new(&[batch, cfg.hidden], h0).unwrap() }
}

/// Fixed random projection of `x` to a scalar.
fn project(tape: &mut Tape<'_>, x: Var, salt: u64) -> Var {
    let shape = tape.value(x).shape().to_vec();
    let n = tape.value(x).numel();
    let mut rng = seed::stream(salt, "projection", 0);
    let w = Tensor::new(&shape, (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap();
    let w = tape.constant(w).unwrap();
    let y = tape.mul(x, w).unwrap();
    tape.sum(y).unwrap()
}

fn gc() -> GradCheckConfig {
    GradCheckConfig { max_entries: 40, ..GradCheckConfig::default() }
}

fn assert_passes(what: &str, report: avnav_tensor::gradcheck::GradCheckReport) {
    assert!(report.passed(&gc()), "{what}: max rel err {} at {:?}", report.max_rel_err, report.worst);
}

#[test]
fn zero_params_give_uniform_logits() {
    let cfg = PolicyConfig::default();
    let p = Policy::zeros(cfg);
    let obs = observations(&cfg, 3, 4);
    let refs: Vec<&Observation> = obs.iter().collect();
    let out = p.forward(&refs, &p.net.zero_hidden(3), 0.5).unwrap();
    assert!(out.action_logits.data().iter().all(|&l| l == 0.0));
}

#[test]
fn lambda_never_changes_forward() {
    let cfg = PolicyConfig::default();
    let p = Policy::new(cfg, &mut seed::stream(3, "policy-init", 0));
    let obs = observations(&cfg, 4, 5);
    let refs: Vec<&Observation> = obs.iter().collect();
    let h = p.net.zero_hidden(4);
    let a = p.forward(&refs, &h, 0.0).unwrap();
    let b = p.forward(&refs, &h, 1.0).unwrap();
    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    for (x, y) in [
        (&a.action_logits, &b.action_logits),
        (&a.value, &b.value),
        (&a.class_logits, &b.class_logits),
        (&a.angle_pred, &b.angle_pred),
        (&a.hidden, &b.hidden),
    ] {
        assert_eq!(bits(x), bits(y));
    }
    assert!(a.angle_pred.is_finite());
}

#[test]
fn hidden_state_matters() {
    let cfg = PolicyConfig::default();
    let p = Policy::new(cfg, &mut seed::stream(3, "policy-init", 0));
    let obs = observations(&cfg, 1, 6);
    let refs: Vec<&Observation> = obs.iter().collect();
    let h1 = p.net.zero_hidden(1);
    let h2 = Tensor::full(&[1, cfg.hidden], 0.3);
    let a = p.forward(&refs, &h1, 0.0).unwrap();
    let b = p.forward(&refs, &h2, 0.0).unwrap();
    assert_ne!(a.hidden, b.hidden);
    assert_eq!(a.hidden.shape(), b.hidden.shape());
}

#[test]
fn replaying_a_sequence_is_bit_exact() {
    let cfg = PolicyConfig::default();
    let p = Policy::new(cfg, &mut seed::stream(8, "policy-init", 0));
    let obs = observations(&cfg, 6, 9);
    let run = || {
        let mut h = p.net.zero_hidden(1);
        let mut outs = Vec::new();
        for o in &obs {
            let out = p.forward(&[o], &h, 0.3).unwrap();
            h = out.hidden.clone();
            outs.push(h.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
        outs
    };
    assert_eq!(run(), run());

    // The unrolled sequence path reproduces the step-by-step path.
    let refs: Vec<&Observation> = obs.iter().collect();
    let (audio, depth, prev_action) = encode_observations(&cfg, &refs).unwrap();
    let input = SeqInput { steps: 6, batch: 1, audio, depth, prev_action, starts: vec![false; 6], h0: p.net.zero_hidden(1) };
    let mut tape = Tape::new();
    let v = p.net.forward_seq(&mut tape, &p.store, &input, Heads::NONE).unwrap();
    let last = run().pop().unwrap();
    let seq: Vec<u32> = tape.value(v.h_last).data().iter().map(|x| x.to_bits()).collect();
    assert_eq!(seq, last);
}

#[test]
fn audio_classifier_head_gradcheck() {
    let cfg = tiny_cfg();
    let p = Policy::new(cfg, &mut seed::stream(1, "policy-init", 0));
    let ids = p.net.group_ids(&p.store, ParamGroup::AudioClassifier);
    let mut rng = seed::stream(2, "x", 0);
    let x = Tensor::new(&[6, cfg.audio_out], (0..6 * cfg.audio_out).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap();
    let labels = [0, 1, 2, 2, 1, 0];
    let r = check_params(&gc(), &p.store, Some(&ids), |tape, store: &ParamStore| {
        let xv = tape.constant(x.clone())?;
        let logits = p.net.classify(tape, store, xv, 0.7).map_err(to_tensor_err)?;
        tape.cross_entropy(logits, &labels)
    })
    .unwrap();
    assert_passes("audio classifier", r);
}

#[test]
fn location_predictor_head_gradcheck() {
    let cfg = tiny_cfg();
    let p = Policy::new(cfg, &mut seed::stream(1, "policy-init", 0));
    let ids = p.net.group_ids(&p.store, ParamGroup::LocationPredictor);
    let mut rng = seed::stream(3, "x", 0);
    let x = Tensor::new(&[5, cfg.hidden], (0..5 * cfg.hidden).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap();
    let target = Tensor::new(&[5, 4], (0..20).map(|i| (i as f32 * 0.37).sin()).collect()).unwrap();
    let r = check_params(&gc(), &p.store, Some(&ids), |tape, store: &ParamStore| {
        let xv = tape.constant(x.clone())?;
        let pred = p.net.locate(tape, store, xv).map_err(to_tensor_err)?;
        let t = tape.constant(target.clone())?;
        tape.mse(pred, t)
    })
    .unwrap();
    assert_passes("location predictor", r);
}

#[test]
fn recurrent_core_gradcheck() {
    let cfg = tiny_cfg();
    let p = Policy::new(cfg, &mut seed::stream(4, "policy-init", 0));
    let ids = p.net.group_ids(&p.store, ParamGroup::Recurrent);
    let mut rng = seed::stream(5, "x", 0);
    let xs: Vec<Tensor> = (0..3)
        .map(|_| Tensor::new(&[2, cfg.core_input()], (0..2 * cfg.core_input()).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap())
        .collect();
    let h0 = Tensor::new(&[2, cfg.hidden], (0..2 * cfg.hidden).map(|_| rng.random_range(-0.5f32..0.5)).collect()).unwrap();
    let r = check_params(&gc(), &p.store, Some(&ids), |tape, store: &ParamStore| {
        let mut h = tape.constant(h0.clone())?;
        for x in &xs {
            let xv = tape.constant(x.clone())?;
            h = p.net.recurrent_step(tape, store, xv, h).map_err(to_tensor_err)?;
        }
        Ok(project(tape, h, 11))
    })
    .unwrap();
    assert_passes("recurrent core", r);
}

/// Scalar touching every output. Reversal strength -1 turns the reversal into
/// a plain identity, so analytic and numeric derivatives must agree.
fn full_loss<'p>(p: &Policy, tape: &mut Tape<'p>, store: &'p ParamStore, input: &SeqInput) -> avnav_tensor::Result<Var> {
    let v = p.net.forward_seq(tape, store, input, Heads::all(-1.0)).map_err(to_tensor_err)?;
    let parts = [
        project(tape, v.logits, 1),
        project(tape, v.value, 2),
        project(tape, v.class_logits.unwrap(), 3),
        project(tape, v.angle_pred.unwrap(), 4),
    ];
    let mut total = parts[0];
    for &x in &parts[1..] {
        total = tape.add(total, x)?;
    }
    Ok(total)
}

#[test]
fn full_policy_gradcheck() {
    let cfg = tiny_cfg();
    let p = Policy::new(cfg, &mut seed::stream(6, "policy-init", 0));
    let input = seq_input(&cfg, 3, 2, 12);
    let r = check_params(&gc(), &p.store, None, |tape, store: &ParamStore| full_loss(&p, tape, store, &input)).unwrap();
    assert_passes("full policy", r);
}

#[test]
fn full_policy_gradcheck_default_sizes() {
    let cfg = PolicyConfig::default();
    let p = Policy::new(cfg, &mut seed::stream(7, "policy-init", 0));
    let input = seq_input(&cfg, 2, 2, 13);
    let sampled = GradCheckConfig { max_entries: 6, ..gc() };
    let r = check_params(&sampled, &p.store, None, |tape, store: &ParamStore| full_loss(&p, tape, store, &input)).unwrap();
    assert!(r.passed(&sampled), "max rel err {} at {:?}", r.max_rel_err, r.worst);
}

fn to_tensor_err(e: avnav::Error) -> avnav_tensor::TensorError {
    match e {
        avnav::Error::Tensor(t) => t,
        other => avnav_tensor::TensorError::Format(other.to_string()),
    }
}

fn aux_grads(p: &Policy, input: &SeqInput, use_c: bool, use_p: bool, lambda: f32) -> avnav_tensor::Gradients {
    let mut tape = Tape::new();
    let v = p.net.forward_seq(&mut tape, &p.store, input, Heads::all(lambda)).unwrap();
    let rows = input.steps * input.batch;
    let labels: Vec<usize> = (0..rows).map(|i| i % p.cfg().classes).collect();
    let lc = tape.cross_entropy(v.class_logits.unwrap(), &labels).unwrap();
    let target = tape.constant(Tensor::new(&[rows, 4], (0..rows * 4).map(|i| (i as f32).cos()).collect()).unwrap()).unwrap();
    let lp = tape.mse(v.angle_pred.unwrap(), target).unwrap();
    let loss = match (use_c, use_p) {
        (true, true) => tape.add(lc, lp).unwrap(),
        (true, false) => lc,
        (false, true) => lp,
        _ => unreachable!(),
    };
    tape.backward(loss).unwrap()
}

fn group_grad_norm(p: &Policy, g: &avnav_tensor::Gradients, group: ParamGroup) -> f64 {
    p.net
        .group_ids(&p.store, group)
        .into_iter()
        .filter_map(|id| g.param(id))
        .flat_map(|s| s.iter().map(|&v| f64::from(v).powi(2)))
        .sum()
}

#[test]
fn auxiliary_gradient_routing() {
    let cfg = PolicyConfig::default();
    let p = Policy::new(cfg, &mut seed::stream(9, "policy-init", 0));
    let input = seq_input(&cfg, 3, 2, 14);

    let c_only = aux_grads(&p, &input, true, false, 0.5);
    for g in [ParamGroup::VisualEncoder, ParamGroup::Recurrent, ParamGroup::Actor, ParamGroup::Critic, ParamGroup::LocationPredictor] {
        assert_eq!(group_grad_norm(&p, &c_only, g), 0.0, "{g:?} touched by the classifier loss");
    }
    assert!(group_grad_norm(&p, &c_only, ParamGroup::AudioEncoder) > 0.0);
    assert!(group_grad_norm(&p, &c_only, ParamGroup::AudioClassifier) > 0.0);

    let p_only = aux_grads(&p, &input, false, true, 0.5);
    assert_eq!(group_grad_norm(&p, &p_only, ParamGroup::AudioClassifier), 0.0);
    assert!(group_grad_norm(&p, &p_only, ParamGroup::LocationPredictor) > 0.0);
    assert!(group_grad_norm(&p, &p_only, ParamGroup::VisualEncoder) > 0.0);

    // With no reversal strength the classifier still trains but the encoder gets nothing from it.
    let zero = aux_grads(&p, &input, true, false, 0.0);
    assert_eq!(group_grad_norm(&p, &zero, ParamGroup::AudioEncoder), 0.0);
    assert!(group_grad_norm(&p, &zero, ParamGroup::AudioClassifier) > 0.0);
}

#[test]
fn reversal_scales_encoder_gradient_by_minus_lambda() {
    let cfg = PolicyConfig::default();
    let p = Policy::new(cfg, &mut seed::stream(10, "policy-init", 0));
    let obs = observations(&cfg, 8, 15);
    let refs: Vec<&Observation> = obs.iter().collect();
    let (audio, _, _) = encode_observations(&cfg, &refs).unwrap();
    let labels: Vec<usize> = (0..8).map(|i| i % cfg.classes).collect();
    let lambda = 0.73f32;

    let grads = |reverse: bool| {
        let mut tape = Tape::new();
        let x = tape.constant(audio.clone()).unwrap();
        let f = p.net.audio_features(&mut tape, &p.store, x).unwrap();
        // Features as a leaf, to compare the gradient at the layer boundary exactly.
        let leaf = tape.leaf(tape.value(f).clone(), true).unwrap();
        let logits_leaf = if reverse { p.net.classify(&mut tape, &p.store, leaf, lambda) } else { p.net.classify_plain(&mut tape, &p.store, leaf) }.unwrap();
        let logits_enc = if reverse { p.net.classify(&mut tape, &p.store, f, lambda) } else { p.net.classify_plain(&mut tape, &p.store, f) }.unwrap();
        let l1 = tape.cross_entropy(logits_leaf, &labels).unwrap();
        let l2 = tape.cross_entropy(logits_enc, &labels).unwrap();
        let g1 = tape.backward(l1).unwrap();
        let g2 = tape.backward(l2).unwrap();
        let at_leaf = g1.wrt(leaf).unwrap().to_vec();
        let enc: Vec<Vec<f32>> = p
            .net
            .group_ids(&p.store, ParamGroup::AudioEncoder)
            .into_iter()
            .map(|id| g2.param(id).unwrap().to_vec())
            .collect();
        (at_leaf, enc)
    };
    let (leaf_rev, enc_rev) = grads(true);
    let (leaf_plain, enc_plain) = grads(false);
    for (r, g) in leaf_rev.iter().zip(&leaf_plain) {
        assert_eq!(r.to_bits(), ((-lambda) * g).to_bits());
    }
    for (rev, plain) in enc_rev.iter().zip(&enc_plain) {
        let (mut diff, mut norm) = (0.0f64, 0.0f64);
        for (a, b) in rev.iter().zip(plain) {
            let expected = -f64::from(lambda) * f64::from(*b);
            diff += (f64::from(*a) - expected).powi(2);
            norm += expected.powi(2);
        }
        assert!(norm > 0.0);
        assert!(diff.sqrt() <= 1e-6 * norm.sqrt(), "relative deviation {}", (diff / norm).sqrt());
    }
}
