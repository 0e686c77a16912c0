//! AdamW (decoupled weight decay) and SGD with momentum.

use crate::{NnError, ParamStore, Result, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    AdamW {
        beta1: f64,
        beta2: f64,
        eps: f64,
        weight_decay: f64,
    },
    Sgd {
        momentum: f64,
    },
}

impl OptimizerKind {
    pub fn adamw() -> Self {
        OptimizerKind::AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }

    pub fn sgd() -> Self {
        OptimizerKind::Sgd { momentum: 0.0 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::AdamW { .. } => "adamw",
            OptimizerKind::Sgd { .. } => "sgd",
        }
    }
}

/// Per-parameter optimizer moments.
#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    pub kind: OptimizerKind,
    pub step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(kind: OptimizerKind, params: &ParamStore<T>) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(_, p)| Tensor::zeros(p.value.shape()))
                .collect()
        };
        let second = match kind {
            OptimizerKind::AdamW { .. } => zeros(),
            OptimizerKind::Sgd { .. } => Vec::new(),
        };
        OptimizerState {
            kind,
            step: 0,
            first: zeros(),
            second,
        }
    }

    /// Applies one update with learning rate `lr` using the accumulated
    /// gradients.
    pub fn step(&mut self, params: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if self.first.len() != params.len() {
            return Err(NnError::State(format!(
                "optimizer tracks {} tensors, model has {}",
                self.first.len(),
                params.len()
            )));
        }
        for (m, p) in self.first.iter().zip(params.iter()) {
            if m.shape() != p.1.value.shape() || p.1.grad.shape() != p.1.value.shape() {
                return Err(NnError::State(format!(
                    "missing or misshapen gradient for {}",
                    p.1.name
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        match self.kind {
            OptimizerKind::AdamW {
                beta1,
                beta2,
                eps,
                weight_decay,
            } => {
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                let (b1, b2) = (T::of(beta1), T::of(beta2));
                let decay = T::of(1.0 - lr * weight_decay);
                let (lr_t, eps_t) = (T::of(lr), T::of(eps));
                let (bc1, bc2) = (T::of(bc1), T::of(bc2));
                for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
                    let w = p.value.data_mut();
                    let g = p.grad.data();
                    let (m, v) = (m.data_mut(), v.data_mut());
                    for i in 0..w.len() {
                        w[i] *= decay;
                        m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                        v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                        let mhat = m[i] / bc1;
                        let vhat = v[i] / bc2;
                        w[i] -= lr_t * mhat / (vhat.sqrt() + eps_t);
                    }
                }
            }
            OptimizerKind::Sgd { momentum } => {
                let mu = T::of(momentum);
                let lr_t = T::of(lr);
                for (p, buf) in params.iter_mut().zip(&mut self.first) {
                    let w = p.value.data_mut();
                    let g = p.grad.data();
                    let b = buf.data_mut();
                    for i in 0..w.len() {
                        b[i] = mu * b[i] + g[i];
                        w[i] -= lr_t * b[i];
                    }
                }
            }
        }
        Ok(())
    }
}
