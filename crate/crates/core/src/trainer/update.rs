use rand::seq::SliceRandom;

use avnav_tensor::{Gradients, Optimizer, ParamStore, Tape, TensorError, Tensor, Var};

use super::buffer::{gae_advantages, normalize, RolloutBuffer};
use super::config::PpoConfig;
use crate::error::{Error, Result};
use crate::policy::{Heads, Policy, PolicyNet, SeqInput, ANGLE_DIM};
use crate::seed::Rng;

/// One minibatch of sequence chunks ready for a forward pass.
#[derive(Clone, Debug)]
pub struct Batch {
    pub input: SeqInput,
    pub actions: Vec<usize>,
    pub old_log_probs: Tensor,
    pub advantages: Tensor,
    pub returns: Tensor,
    /// Rows with a classifier label, and the labels.
    pub class_rows: Vec<usize>,
    pub class_labels: Vec<usize>,
    /// Rows away from the source, and their direction targets.
    pub locate_rows: Vec<usize>,
    pub locate_targets: Tensor,
}

impl Batch {
    /// Gathers chunks `(env, chunk)` of length `chunk_len` from the buffer.
    /// Minibatch row `s * chunks.len() + j` is step `s` of chunk `j`.
    pub fn from_chunks(
        buf: &RolloutBuffer,
        chunks: &[(usize, usize)],
        chunk_len: usize,
        advantages: &[f32],
        returns: &[f32],
        classes: usize,
    ) -> Result<Self> {
        let k = chunks.len();
        let rows = k * chunk_len;
        let (ad, r, h) = (buf.audio_dim, buf.rays, buf.hidden_dim);
        let mut audio = Vec::with_capacity(rows * ad);
        let mut depth = Vec::with_capacity(rows * r);
        let mut prev = Vec::with_capacity(rows * 4);
        let mut starts = Vec::with_capacity(rows);
        let mut actions = Vec::with_capacity(rows);
        let (mut old, mut adv, mut ret) = (Vec::with_capacity(rows), Vec::with_capacity(rows), Vec::with_capacity(rows));
        let (mut class_rows, mut class_labels, mut locate_rows, mut targets) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let mut h0 = Vec::with_capacity(k * h);
        for &(e, c) in chunks {
            if e >= buf.envs || (c + 1) * chunk_len > buf.steps {
                return Err(Error::InvalidArgument(format!("chunk ({e}, {c}) outside the buffer")));
            }
            let i = buf.row(c * chunk_len, e);
            h0.extend_from_slice(&buf.hidden[i * h..(i + 1) * h]);
        }
        for s in 0..chunk_len {
            for &(e, c) in chunks {
                let i = buf.row(c * chunk_len + s, e);
                let row = actions.len();
                audio.extend_from_slice(&buf.audio[i * ad..(i + 1) * ad]);
                depth.extend_from_slice(&buf.depth[i * r..(i + 1) * r]);
                prev.extend_from_slice(&buf.prev_action[i * 4..(i + 1) * 4]);
                // The stored state at a chunk's first step already reflects any reset.
                starts.push(s > 0 && buf.starts[i]);
                actions.push(buf.actions[i]);
                old.push(buf.log_probs[i]);
                adv.push(advantages[i]);
                ret.push(returns[i]);
                if buf.categories[i] < classes {
                    class_rows.push(row);
                    class_labels.push(buf.categories[i]);
                }
                if !buf.at_source[i] {
                    locate_rows.push(row);
                    targets.extend_from_slice(&buf.angles[i]);
                }
            }
        }
        let n_loc = locate_rows.len();
        Ok(Batch {
            input: SeqInput {
                steps: chunk_len,
                batch: k,
                audio: Tensor::new(&[rows, ad], audio)?,
                depth: Tensor::new(&[rows, r], depth)?,
                prev_action: Tensor::new(&[rows, 4], prev)?,
                starts,
                h0: Tensor::new(&[k, h], h0)?,
            },
            actions,
            old_log_probs: Tensor::new(&[rows, 1], old)?,
            advantages: Tensor::new(&[rows, 1], adv)?,
            returns: Tensor::new(&[rows, 1], ret)?,
            class_rows,
            class_labels,
            locate_rows,
            locate_targets: Tensor::new(&[n_loc, ANGLE_DIM], targets)?,
        })
    }

    /// The whole buffer as a single batch of one chunk per environment.
    pub fn whole(buf: &RolloutBuffer, advantages: &[f32], returns: &[f32], classes: usize) -> Result<Self> {
        let chunks: Vec<(usize, usize)> = (0..buf.envs).map(|e| (e, 0)).collect();
        Self::from_chunks(buf, &chunks, buf.steps, advantages, returns, classes)
    }

    pub fn rows(&self) -> usize {
        self.actions.len()
    }
}

/// Loss terms on the tape. `total` combines them with the configured weights.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub policy: Var,
    pub value: Var,
    pub entropy: Var,
    pub class: Option<Var>,
    pub locate: Option<Var>,
}

/// `-mean(min(r * A, clip(r, 1 - eps, 1 + eps) * A))` with `r = exp(logp - old)`.
pub fn surrogate(tape: &mut Tape<'_>, log_probs: Var, old: Var, advantages: Var, clip: f32) -> avnav_tensor::Result<Var> {
    let diff = tape.sub(log_probs, old)?;
    let ratio = tape.exp(diff)?;
    let unclipped = tape.mul(ratio, advantages)?;
    let clipped = tape.clamp(ratio, 1.0 - clip, 1.0 + clip)?;
    let clipped = tape.mul(clipped, advantages)?;
    let m = tape.minimum(unclipped, clipped)?;
    let m = tape.mean(m)?;
    tape.scale(m, -1.0)
}

pub fn build_loss<'p>(
    tape: &mut Tape<'p>,
    net: &PolicyNet,
    store: &'p ParamStore,
    batch: &Batch,
    cfg: &PpoConfig,
    lambda: f32,
) -> Result<LossVars> {
    let use_class = cfg.class_weight != 0.0 && !batch.class_rows.is_empty();
    let use_locate = cfg.locate_weight != 0.0 && !batch.locate_rows.is_empty();
    let heads = Heads { classifier: use_class, locator: use_locate, lambda };
    let v = net.forward_seq(tape, store, &batch.input, heads)?;
    let rows = batch.rows() as f32;

    let log_all = tape.log_softmax(v.logits)?;
    let log_probs = tape.pick(log_all, &batch.actions)?;
    let old = tape.constant(batch.old_log_probs.clone())?;
    let adv = tape.constant(batch.advantages.clone())?;
    let policy = surrogate(tape, log_probs, old, adv, cfg.clip)?;

    let returns = tape.constant(batch.returns.clone())?;
    let value = tape.mse(v.value, returns)?;

    let probs = tape.softmax(v.logits)?;
    let plogp = tape.mul(probs, log_all)?;
    let entropy = tape.sum(plogp)?;
    let entropy = tape.scale(entropy, -1.0 / rows)?;

    let value_term = tape.scale(value, cfg.value_coef)?;
    let entropy_term = tape.scale(entropy, -cfg.entropy_coef)?;
    let mut total = tape.add(policy, value_term)?;
    total = tape.add(total, entropy_term)?;

    let mut class = None;
    if let (true, Some(logits)) = (use_class, v.class_logits) {
        let picked = tape.gather_rows(logits, &batch.class_rows)?;
        let lc = tape.cross_entropy(picked, &batch.class_labels)?;
        let term = tape.scale(lc, cfg.class_weight)?;
        total = tape.add(total, term)?;
        class = Some(lc);
    }
    let mut locate = None;
    if let (true, Some(pred)) = (use_locate, v.angle_pred) {
        let picked = tape.gather_rows(pred, &batch.locate_rows)?;
        let target = tape.constant(batch.locate_targets.clone())?;
        let lp = tape.mse(picked, target)?;
        let term = tape.scale(lp, cfg.locate_weight)?;
        total = tape.add(total, term)?;
        locate = Some(lp);
    }
    Ok(LossVars { total, policy, value, entropy, class, locate })
}

/// Mean loss terms over every minibatch of an update.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub actor: f64,
    pub value: f64,
    pub entropy: f64,
    pub class: f64,
    pub locate: f64,
    pub total: f64,
    pub minibatches: usize,
}

impl LossReport {
    fn add(&mut self, tape: &Tape<'_>, v: &LossVars) -> Result<()> {
        let get = |x: Var| -> Result<f64> { Ok(f64::from(tape.value(x).item()?)) };
        self.actor += get(v.policy)?;
        self.value += get(v.value)?;
        self.entropy += get(v.entropy)?;
        self.class += v.class.map(get).transpose()?.unwrap_or(0.0);
        self.locate += v.locate.map(get).transpose()?.unwrap_or(0.0);
        self.total += get(v.total)?;
        self.minibatches += 1;
        Ok(())
    }

    fn finish(mut self) -> Self {
        let n = self.minibatches.max(1) as f64;
        for x in [&mut self.actor, &mut self.value, &mut self.entropy, &mut self.class, &mut self.locate, &mut self.total] {
            *x /= n;
        }
        self
    }
}

fn non_finite(update: u64, lambda: f32, report: &LossReport, e: Error) -> Error {
    match e {
        Error::Tensor(TensorError::NonFinite { op }) => Error::NonFiniteLoss {
            update,
            dump: format!(
                "op={op} lambda={lambda} minibatch={} actor={} value={} entropy={} class={} locate={}",
                report.minibatches, report.actor, report.value, report.entropy, report.class, report.locate
            ),
        },
        other => other,
    }
}

/// Loss terms and parameter gradients for a single batch.
pub fn minibatch_gradients(policy: &Policy, batch: &Batch, cfg: &PpoConfig, lambda: f32) -> Result<(Gradients, LossReport)> {
    let mut tape = Tape::new();
    let vars = build_loss(&mut tape, &policy.net, &policy.store, batch, cfg, lambda)?;
    let mut report = LossReport::default();
    report.add(&tape, &vars)?;
    Ok((tape.backward(vars.total)?, report.finish()))
}

/// Runs every epoch and minibatch of one PPO update; one optimizer step per
/// minibatch updates all parameters.
pub fn ppo_update(
    policy: &mut Policy,
    optimizer: &mut Optimizer,
    buf: &RolloutBuffer,
    cfg: &PpoConfig,
    lambda: f32,
    rng: &mut Rng,
    update_index: u64,
) -> Result<LossReport> {
    let (raw_adv, returns) = gae_advantages(buf, cfg.gamma, cfg.gae_lambda);
    let adv = normalize(&raw_adv);
    let per_env = buf.steps / cfg.bptt_len;
    let mut chunks: Vec<(usize, usize)> = (0..buf.envs).flat_map(|e| (0..per_env).map(move |c| (e, c))).collect();
    let classes = policy.cfg().classes;
    let mut report = LossReport::default();
    for _ in 0..cfg.epochs {
        chunks.shuffle(rng);
        for m in 0..cfg.minibatches {
            let lo = m * chunks.len() / cfg.minibatches;
            let hi = (m + 1) * chunks.len() / cfg.minibatches;
            let batch = Batch::from_chunks(buf, &chunks[lo..hi], cfg.bptt_len, &adv, &returns, classes)?;
            let grads = {
                let mut tape = Tape::new();
                let vars = build_loss(&mut tape, &policy.net, &policy.store, &batch, cfg, lambda)
                    .map_err(|e| non_finite(update_index, lambda, &report, e))?;
                report.add(&tape, &vars)?;
                tape.backward(vars.total)
                    .map_err(|e| non_finite(update_index, lambda, &report, e.into()))?
            };
            policy.store.zero_grad();
            policy.store.accumulate(&grads);
            optimizer
                .step(&mut policy.store)
                .map_err(|e| non_finite(update_index, lambda, &report, e.into()))?;
        }
    }
    Ok(report.finish())
}
