use rand::Rng;

use super::net::ActMode;
use crate::env::Action;
use crate::error::{Error, Result};

/// Progress of the adversarial-intensity ramp.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleState {
    /// Completed episodes.
    pub n: u64,
    /// Planned episodes.
    pub total: u64,
    /// Upper bound on the intensity.
    pub bound: f64,
}

impl ScheduleState {
    pub fn lambda(&self) -> Result<f64> {
        lambda_schedule(self.n.min(self.total), self.total, self.bound)
    }
}

/// Sigmoid ramp from 0 toward `bound`: `2b / (1 + exp(-10 n / N)) - b`.
pub fn lambda_schedule(n: u64, total: u64, bound: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::InvalidArgument("schedule needs at least one planned episode".into()));
    }
    if n > total {
        return Err(Error::InvalidArgument(format!("progress {n} exceeds total {total}")));
    }
    if !(bound >= 0.0 && bound.is_finite()) {
        return Err(Error::InvalidArgument(format!("bound {bound} must be finite and nonnegative")));
    }
    let p = n as f64 / total as f64;
    Ok(2.0 * bound / (1.0 + (-10.0 * p).exp()) - bound)
}

/// Picks an action from one row of logits and returns its log-probability.
/// Greedy mode breaks ties toward the lowest index.
pub fn act<R: Rng + ?Sized>(logits: &[f32], rng: &mut R, mode: ActMode) -> Result<(Action, f32)> {
    if logits.len() != Action::COUNT || logits.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument(format!("bad action logits {logits:?}")));
    }
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let shifted: Vec<f64> = logits.iter().map(|&l| f64::from(l) - f64::from(max)).collect();
    let z: f64 = shifted.iter().map(|s| s.exp()).sum();
    let log_probs: Vec<f64> = shifted.iter().map(|s| s - z.ln()).collect();

    let index = match mode {
        ActMode::Greedy => {
            let mut best = 0;
            for (i, &l) in logits.iter().enumerate() {
                if l > logits[best] {
                    best = i;
                }
            }
            best
        }
        ActMode::Sample => {
            let u: f64 = rng.random::<f64>();
            let mut acc = 0.0;
            let mut chosen = Action::COUNT - 1;
            for (i, lp) in log_probs.iter().enumerate() {
                acc += lp.exp();
                if u < acc {
                    chosen = i;
                    break;
                }
            }
            // Never return a zero-probability action from rounding slack.
            while log_probs[chosen].is_infinite() && chosen > 0 {
                chosen -= 1;
            }
            chosen
        }
    };
    let action = Action::from_index(index).ok_or_else(|| Error::InvalidArgument("action index".into()))?;
    Ok((action, log_probs[index] as f32))
}

/// Angle from a predicted (sin, cos) pair, normalized to unit length first.
pub fn decode_angle(sin_pred: f64, cos_pred: f64) -> Result<f64> {
    let norm = sin_pred.hypot(cos_pred);
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::InvalidArgument(format!("cannot decode angle from ({sin_pred}, {cos_pred})")));
    }
    Ok((sin_pred / norm).atan2(cos_pred / norm))
}
