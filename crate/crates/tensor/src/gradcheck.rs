//! Central finite-difference gradient checking.
//!
//! The numerical side only ever evaluates the forward pass, so it stays
//! independent of every backward rule it checks.

use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Finite-difference half step.
    pub step: f32,
    /// Maximum allowed relative error.
    pub rel_tol: f64,
    /// Lower bound on the relative-error denominator. In f32 the central
    /// difference carries absolute noise of roughly `ulp(loss) / step`, so
    /// gradients much smaller than this are compared on an absolute scale.
    pub floor: f64,
    /// Check at most this many entries per tensor (evenly strided).
    pub max_entries: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            rel_tol: 1e-3,
            floor: 0.5,
            max_entries: usize::MAX,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// `(tensor, index, analytic, numeric)` of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self, cfg: &GradCheckConfig) -> bool {
        self.checked > 0 && self.max_rel_err <= cfg.rel_tol
    }

    fn record(&mut self, cfg: &GradCheckConfig, name: &str, idx: usize, analytic: f64, numeric: f64) {
        let denom = analytic.abs().max(numeric.abs()).max(cfg.floor);
        let err = (analytic - numeric).abs() / denom;
        self.checked += 1;
        if err > self.max_rel_err || self.worst.is_none() {
            self.max_rel_err = self.max_rel_err.max(err);
            self.worst = Some((name.to_string(), idx, analytic, numeric));
        }
    }

    fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        if other.max_rel_err >= self.max_rel_err && other.worst.is_some() {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst;
        }
    }
}

fn indices(n: usize, max: usize) -> impl Iterator<Item = usize> {
    let stride = n.div_ceil(max.max(1)).max(1);
    (0..n).step_by(stride)
}

fn central(step: f32, x: f32, mut eval: impl FnMut(f32) -> Result<f32>) -> Result<f64> {
    let (xp, xm) = (x + step, x - step);
    let (lp, lm) = (eval(xp)?, eval(xm)?);
    Ok((f64::from(lp) - f64::from(lm)) / (f64::from(xp) - f64::from(xm)))
}

/// Checks gradients with respect to free input tensors. `build` receives one
/// leaf per input and must return a scalar loss.
pub fn check_inputs<F>(cfg: &GradCheckConfig, inputs: &[Tensor], build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f32> {
        let mut tape = Tape::new();
        let vars = xs
            .iter()
            .map(|t| tape.leaf(t.clone(), true))
            .collect::<Result<Vec<_>>>()?;
        let loss = build(&mut tape, &vars)?;
        tape.value(loss).item()
    };

    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|t| tape.leaf(t.clone(), true))
        .collect::<Result<Vec<_>>>()?;
    let loss = build(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let zeros = vec![0.0; inputs[k].numel()];
        let analytic = grads.wrt(*var).unwrap_or(&zeros).to_vec();
        for i in indices(inputs[k].numel(), cfg.max_entries) {
            let x = inputs[k].data()[i];
            let numeric = central(cfg.step, x, |v| {
                work[k].data_mut()[i] = v;
                eval(&work)
            })?;
            work[k].data_mut()[i] = x;
            report.record(cfg, &format!("input{k}"), i, f64::from(analytic[i]), numeric);
        }
    }
    Ok(report)
}

/// Checks gradients of every parameter in `store` (or the `only` subset).
pub fn check_params<F>(
    cfg: &GradCheckConfig,
    store: &ParamStore,
    only: Option<&[ParamId]>,
    build: F,
) -> Result<GradCheckReport>
where
    F: for<'a> Fn(&mut Tape<'a>, &'a ParamStore) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new();
        let loss = build(&mut tape, store)?;
        tape.backward(loss)?
    };

    let ids: Vec<ParamId> = match only {
        Some(ids) => ids.to_vec(),
        None => store.ids().collect(),
    };
    let mut work = store.clone();
    let mut report = GradCheckReport::default();
    for id in ids {
        let mut sub = GradCheckReport::default();
        let n = store.value(id).numel();
        let zeros = vec![0.0; n];
        let grad = analytic.param(id).unwrap_or(&zeros).to_vec();
        let name = store.get(id).name.clone();
        for i in indices(n, cfg.max_entries) {
            let x = store.value(id).data()[i];
            let numeric = central(cfg.step, x, |v| {
                work.get_mut(id).value.data_mut()[i] = v;
                let mut tape = Tape::new();
                let loss = build(&mut tape, &work)?;
                tape.value(loss).item()
            })?;
            work.get_mut(id).value.data_mut()[i] = x;
            sub.record(cfg, &name, i, f64::from(grad[i]), numeric);
        }
        report.merge(sub);
    }
    Ok(report)
}
