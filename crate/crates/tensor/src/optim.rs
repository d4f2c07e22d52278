use crate::error::{Result, TensorError};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    /// `theta <- theta - lr * grad`.
    Sgd,
    /// Adam with bias correction.
    Adam { beta1: f32, beta2: f32, eps: f32 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f32,
    /// Rescale the global gradient norm to at most this value before stepping.
    pub max_grad_norm: Option<f32>,
    steps: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f32, store: &ParamStore) -> Self {
        let zeros = |s: &ParamStore| s.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Self {
            kind,
            lr,
            max_grad_norm: None,
            steps: 0,
            first: zeros(store),
            second: zeros(store),
        }
    }

    pub fn with_max_grad_norm(mut self, norm: Option<f32>) -> Self {
        self.max_grad_norm = norm;
        self
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies the accumulated gradients in `store`; gradients are left in place.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if let Some(max) = self.max_grad_norm {
            let norm = store.grad_norm();
            if !norm.is_finite() {
                return Err(TensorError::NonFinite { op: "optimizer_step" });
            }
            if norm > max {
                store.scale_grads(max / (norm + 1e-6));
            }
        }
        self.steps += 1;
        let lr = self.lr;
        match self.kind {
            OptimizerKind::Sgd => {
                for p in store.iter_mut() {
                    for (w, &g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
                        *w -= lr * g;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.steps as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                for ((p, m), v) in store.iter_mut().zip(&mut self.first).zip(&mut self.second) {
                    let it = p
                        .value
                        .data_mut()
                        .iter_mut()
                        .zip(p.grad.data())
                        .zip(m.data_mut().iter_mut().zip(v.data_mut()));
                    for ((w, &g), (mi, vi)) in it {
                        *mi = beta1 * *mi + (1.0 - beta1) * g;
                        *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                        let mhat = *mi / bc1;
                        let vhat = *vi / bc2;
                        *w -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        if store.iter().any(|(_, p)| !p.value.is_finite()) {
            return Err(TensorError::NonFinite { op: "optimizer_step" });
        }
        Ok(())
    }

    /// Moment buffers, for checkpointing.
    pub fn state(&self) -> (u64, &[Tensor], &[Tensor]) {
        (self.steps, &self.first, &self.second)
    }

    pub fn restore(&mut self, steps: u64, first: Vec<Tensor>, second: Vec<Tensor>) -> Result<()> {
        let ok = first.len() == self.first.len()
            && second.len() == self.second.len()
            && first.iter().zip(&self.first).all(|(a, b)| a.shape() == b.shape())
            && second.iter().zip(&self.second).all(|(a, b)| a.shape() == b.shape());
        if !ok {
            return Err(TensorError::Format("optimizer state does not match parameters".into()));
        }
        self.steps = steps;
        self.first = first;
        self.second = second;
        Ok(())
    }
}
