//! Finite-difference checks over every tensor primitive, the reversal layer,
//! the policy heads, the recurrent core and the assembled policy.

use std::sync::Arc;

use avnav::acoustics::SignatureSet;
use avnav::env::{generate_episodes, generate_scene, Action};
use avnav::policy::{encode_observations, Heads, ParamGroup, Policy, PolicyConfig, SeqInput};
use avnav::seed;
use avnav::sim::{NavEnv, Observation, SensorConfig};
use avnav_tensor::gradcheck::{check_inputs, check_params, GradCheckConfig, GradCheckReport};
use avnav_tensor::{ParamStore, Tape, Tensor, TensorError, Var};
use rand::Rng as _;

use crate::error::Result;

pub struct CheckResult {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

type Build = fn(&mut Tape<'_>, &[Var]) -> avnav_tensor::Result<Var>;

fn rand_tensor(rng: &mut seed::Rng, shape: &[usize], scale: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).expect("shape matches")
}

/// Entries bounded away from zero so relu and clamp kinks are never straddled.
fn rand_away_from_zero(rng: &mut seed::Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f32 = rng.random_range(0.1..1.5);
            if rng.random_bool(0.5) { v } else { -v }
        })
        .collect();
    Tensor::new(shape, data).expect("shape matches")
}

/// Fixed random weighting of `y` summed to a scalar.
fn project(tape: &mut Tape<'_>, y: Var, salt: u64) -> avnav_tensor::Result<Var> {
    let shape = tape.value(y).shape().to_vec();
    let w = rand_tensor(&mut seed::stream(salt, "projection", 0), &shape, 1.0);
    let w = tape.constant(w)?;
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

fn to_tensor_err(e: avnav::Error) -> TensorError {
    match e {
        avnav::Error::Tensor(t) => t,
        other => TensorError::Format(other.to_string()),
    }
}

fn result(name: &str, cfg: &GradCheckConfig, r: GradCheckReport) -> CheckResult {
    CheckResult { name: name.into(), checked: r.checked, max_rel_err: r.max_rel_err, passed: r.passed(cfg) }
}

fn primitives(cfg: &GradCheckConfig, inject_sign_bug: bool) -> Result<Vec<CheckResult>> {
    let mut rng = seed::stream(4, "gradcheck", 0);
    let a = rand_away_from_zero(&mut rng, &[3, 4]);
    let b = rand_away_from_zero(&mut rng, &[3, 4]);
    let m = rand_tensor(&mut rng, &[4, 5], 1.0);
    let bias = rand_tensor(&mut rng, &[4], 1.0);
    let ab = vec![a.clone(), b.clone()];
    let one = vec![a.clone()];

    let reverse: Build = if inject_sign_bug {
        // Claims the negated gradient of a plain identity.
        |t, v| {
            let y = t.grad_reverse(v[0], 1.0)?;
            let y = t.tanh(y)?;
            project(t, y, 30)
        }
    } else {
        |t, v| {
            let y = t.grad_reverse(v[0], -1.0)?;
            let y = t.tanh(y)?;
            project(t, y, 30)
        }
    };

    let cases: Vec<(&str, Vec<Tensor>, Build)> = vec![
        ("matmul", vec![a.clone(), m], |t, v| {
            let y = t.matmul(v[0], v[1])?;
            project(t, y, 10)
        }),
        ("add", ab.clone(), |t, v| {
            let y = t.add(v[0], v[1])?;
            project(t, y, 11)
        }),
        ("sub", ab.clone(), |t, v| {
            let y = t.sub(v[0], v[1])?;
            project(t, y, 12)
        }),
        ("mul", ab.clone(), |t, v| {
            let y = t.mul(v[0], v[1])?;
            project(t, y, 13)
        }),
        ("add_bias", vec![a.clone(), bias], |t, v| {
            let y = t.add_bias(v[0], v[1])?;
            project(t, y, 14)
        }),
        ("concat", ab.clone(), |t, v| {
            let y = t.concat(&[v[0], v[1]])?;
            project(t, y, 15)
        }),
        ("concat_rows", ab.clone(), |t, v| {
            let y = t.concat_rows(&[v[0], v[1]])?;
            project(t, y, 16)
        }),
        ("slice", one.clone(), |t, v| {
            let y = t.slice(v[0], 1, 3)?;
            project(t, y, 17)
        }),
        ("slice_rows", one.clone(), |t, v| {
            let y = t.slice_rows(v[0], 1, 3)?;
            project(t, y, 18)
        }),
        ("gather_rows", one.clone(), |t, v| {
            let y = t.gather_rows(v[0], &[2, 0, 2, 1])?;
            project(t, y, 32)
        }),
        ("sum", one.clone(), |t, v| {
            let y = t.mul(v[0], v[0])?;
            t.sum(y)
        }),
        ("mean", one.clone(), |t, v| {
            let y = t.mul(v[0], v[0])?;
            t.mean(y)
        }),
        ("relu", one.clone(), |t, v| {
            let y = t.relu(v[0])?;
            project(t, y, 19)
        }),
        ("tanh", one.clone(), |t, v| {
            let y = t.tanh(v[0])?;
            project(t, y, 20)
        }),
        ("sigmoid", one.clone(), |t, v| {
            let y = t.sigmoid(v[0])?;
            project(t, y, 21)
        }),
        ("exp", one.clone(), |t, v| {
            let y = t.exp(v[0])?;
            project(t, y, 22)
        }),
        ("softmax", one.clone(), |t, v| {
            let y = t.softmax(v[0])?;
            project(t, y, 23)
        }),
        ("log_softmax", one.clone(), |t, v| {
            let y = t.log_softmax(v[0])?;
            project(t, y, 24)
        }),
        ("pick", one.clone(), |t, v| {
            let y = t.pick(v[0], &[3, 0, 2])?;
            project(t, y, 25)
        }),
        ("clamp", one.clone(), |t, v| {
            let y = t.clamp(v[0], -0.8, 0.8)?;
            project(t, y, 26)
        }),
        ("minimum", ab.clone(), |t, v| {
            let y = t.minimum(v[0], v[1])?;
            project(t, y, 27)
        }),
        ("scale", one.clone(), |t, v| {
            let y = t.scale(v[0], -1.7)?;
            project(t, y, 28)
        }),
        ("add_scalar", one.clone(), |t, v| {
            let y = t.add_scalar(v[0], 0.5)?;
            project(t, y, 29)
        }),
        ("cross_entropy", one.clone(), |t, v| t.cross_entropy(v[0], &[1, 3, 0])),
        ("mse", ab, |t, v| t.mse(v[0], v[1])),
        ("grad_reverse", one, reverse),
    ];
    cases
        .into_iter()
        .map(|(name, inputs, build)| Ok(result(name, cfg, check_inputs(cfg, &inputs, build)?)))
        .collect()
}

/// Input gradient of a small network, optionally through a reversal layer.
fn grad_through(x: &Tensor, w: &Tensor, reverse: Option<f32>) -> avnav_tensor::Result<Vec<f32>> {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), true)?;
    let input = match reverse {
        Some(lambda) => tape.grad_reverse(xv, lambda)?,
        None => xv,
    };
    let wv = tape.constant(w.clone())?;
    let h = tape.matmul(input, wv)?;
    let h = tape.tanh(h)?;
    let l = tape.cross_entropy(h, &[1, 0])?;
    Ok(tape.backward(l)?.wrt(xv).map(|g| g.to_vec()).unwrap_or_default())
}

/// The reversal layer's input gradient must be exactly `-lambda` times the
/// plain gradient. Reported error is the largest absolute deviation.
fn reversal_identity() -> Result<CheckResult> {
    let mut worst = 0.0f64;
    let mut checked = 0;
    for k in 0..20u64 {
        let mut rng = seed::stream(k, "reversal", 0);
        let x = rand_tensor(&mut rng, &[2, 4], 2.0);
        let w = rand_tensor(&mut rng, &[4, 3], 2.0);
        let lambda = rng.random_range(-3.0f32..3.0);
        let plain = grad_through(&x, &w, None)?;
        for lam in [lambda, 0.0, 1.0] {
            let reversed = grad_through(&x, &w, Some(lam))?;
            for (p, r) in plain.iter().zip(&reversed) {
                worst = worst.max(f64::from((r - (-lam) * p).abs()));
                checked += 1;
            }
        }
    }
    Ok(CheckResult { name: "grad_reverse scaling".into(), checked, max_rel_err: worst, passed: checked > 0 && worst == 0.0 })
}

fn tiny_policy_cfg() -> PolicyConfig {
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

/// Observations rendered in a real scene at the policy's input sizes.
fn seq_input(cfg: &PolicyConfig, steps: usize, batch: usize, salt: u64) -> Result<SeqInput> {
    let scene = Arc::new(generate_scene(salt, 12, 12, 2)?);
    let eps = generate_episodes(&scene, steps * batch, salt, &[0, 1, 2])?;
    let sigs = Arc::new(SignatureSet::generate(1, 12, cfg.bins, cfg.frames)?);
    let mut sensors = SensorConfig::default();
    sensors.depth.rays = cfg.rays;
    let mut rng = seed::stream(salt, "gradcheck-moves", 0);
    let mut obs: Vec<Observation> = Vec::new();
    for e in eps {
        let mut env = NavEnv::new(scene.clone(), e, sigs.clone(), sensors, seed::stream(0, "noise", 0))?;
        let a = Action::from_index(rng.random_range(0..3)).expect("index below 4");
        obs.push(env.step(a)?.observation);
    }
    let refs: Vec<&Observation> = obs.iter().collect();
    let (audio, depth, prev_action) = encode_observations(cfg, &refs)?;
    let h0 = rand_tensor(&mut rng, &[batch, cfg.hidden], 0.5);
    let mut starts = vec![false; steps * batch];
    if steps > 1 {
        starts[batch] = true;
    }
    Ok(SeqInput { steps, batch, audio, depth, prev_action, starts, h0 })
}

/// Scalar touching every policy output. A reversal strength of -1 makes the
/// reversal layer a true identity, so analytic and numeric gradients agree.
fn full_loss<'p>(p: &Policy, tape: &mut Tape<'p>, store: &'p ParamStore, input: &SeqInput) -> avnav_tensor::Result<Var> {
    let v = p.net.forward_seq(tape, store, input, Heads::all(-1.0)).map_err(to_tensor_err)?;
    let outs = [v.logits, v.value, v.class_logits.expect("classifier on"), v.angle_pred.expect("locator on")];
    let mut total = project(tape, outs[0], 1)?;
    for (i, &o) in outs.iter().enumerate().skip(1) {
        let part = project(tape, o, 1 + i as u64)?;
        total = tape.add(total, part)?;
    }
    Ok(total)
}

fn network(cfg: &GradCheckConfig) -> Result<Vec<CheckResult>> {
    let pc = tiny_policy_cfg();
    let p = Policy::new(pc, &mut seed::stream(1, "policy-init", 0));
    let mut rng = seed::stream(2, "gradcheck", 0);
    let mut out = Vec::new();

    let ids = p.net.group_ids(&p.store, ParamGroup::AudioClassifier);
    let x = rand_tensor(&mut rng, &[6, pc.audio_out], 1.0);
    let r = check_params(cfg, &p.store, Some(&ids), |tape, store: &ParamStore| {
        let xv = tape.constant(x.clone())?;
        let logits = p.net.classify(tape, store, xv, 0.7).map_err(to_tensor_err)?;
        tape.cross_entropy(logits, &[0, 1, 2, 2, 1, 0])
    })?;
    out.push(result("audio classifier head", cfg, r));

    let ids = p.net.group_ids(&p.store, ParamGroup::LocationPredictor);
    let x = rand_tensor(&mut rng, &[5, pc.hidden], 1.0);
    let target = rand_tensor(&mut rng, &[5, 4], 1.0);
    let r = check_params(cfg, &p.store, Some(&ids), |tape, store: &ParamStore| {
        let xv = tape.constant(x.clone())?;
        let pred = p.net.locate(tape, store, xv).map_err(to_tensor_err)?;
        let t = tape.constant(target.clone())?;
        tape.mse(pred, t)
    })?;
    out.push(result("location predictor head", cfg, r));

    let ids = p.net.group_ids(&p.store, ParamGroup::Recurrent);
    let xs: Vec<Tensor> = (0..3).map(|_| rand_tensor(&mut rng, &[2, pc.core_input()], 1.0)).collect();
    let h0 = rand_tensor(&mut rng, &[2, pc.hidden], 0.5);
    let r = check_params(cfg, &p.store, Some(&ids), |tape, store: &ParamStore| {
        let mut h = tape.constant(h0.clone())?;
        for x in &xs {
            let xv = tape.constant(x.clone())?;
            h = p.net.recurrent_step(tape, store, xv, h).map_err(to_tensor_err)?;
        }
        project(tape, h, 11)
    })?;
    out.push(result("recurrent core", cfg, r));

    let input = seq_input(&pc, 3, 2, 12)?;
    let r = check_params(cfg, &p.store, None, |tape, store: &ParamStore| full_loss(&p, tape, store, &input))?;
    out.push(result("full policy", cfg, r));

    let dc = PolicyConfig::default();
    let big = Policy::new(dc, &mut seed::stream(7, "policy-init", 0));
    let input = seq_input(&dc, 2, 2, 13)?;
    let sampled = GradCheckConfig { max_entries: 6, ..*cfg };
    let r = check_params(&sampled, &big.store, None, |tape, store: &ParamStore| full_loss(&big, tape, store, &input))?;
    out.push(result("full policy (default sizes)", &sampled, r));
    Ok(out)
}

/// Runs every check. `inject_sign_bug` swaps in a reversal layer whose
/// gradient contradicts its forward pass, which must be caught.
pub fn run_suite(inject_sign_bug: bool) -> Result<Vec<CheckResult>> {
    let cfg = GradCheckConfig { max_entries: 40, ..GradCheckConfig::default() };
    let mut out = primitives(&cfg, inject_sign_bug)?;
    out.push(reversal_identity()?);
    out.extend(network(&cfg)?);
    Ok(out)
}
