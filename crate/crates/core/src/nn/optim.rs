use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    AdamW { weight_decay: f64 },
}

/// Adam / AdamW with bias correction. Moment buffers are created lazily on
/// the first step to match the store they are applied to.
#[derive(Clone, Debug)]
pub struct Optimizer<F> {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub betas: (f64, f64),
    pub epsilon: f64,
    first: Vec<Array2<F>>,
    second: Vec<Array2<F>>,
    step: u64,
    skipped: u64,
}

impl<F: Real> Optimizer<F> {
    pub fn adam(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Adam, learning_rate)
    }

    pub fn adamw(learning_rate: f64, weight_decay: f64) -> Self {
        Self::new(OptimizerKind::AdamW { weight_decay }, learning_rate)
    }

    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Self {
            kind,
            learning_rate,
            betas: (0.9, 0.999),
            epsilon: 1e-8,
            first: Vec::new(),
            second: Vec::new(),
            step: 0,
            skipped: 0,
        }
    }

    /// Number of applied updates.
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Number of updates refused because of non-finite gradients.
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    /// Returns `false` (and leaves values untouched) if any gradient is
    /// non-finite.
    pub fn step(&mut self, store: &mut ParamStore<F>) -> bool {
        if !store.grads_finite() {
            self.skipped += 1;
            store.zero_grad();
            return false;
        }
        if self.first.len() != store.len() {
            self.first = store.iter().map(|p| Array2::zeros(p.value.raw_dim())).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = self.betas;
        let bc1 = F::of(1.0 - b1.powi(t));
        let bc2 = F::of(1.0 - b2.powi(t));
        let lr = F::of(self.learning_rate);
        let eps = F::of(self.epsilon);
        let (b1, b2) = (F::of(b1), F::of(b2));
        let (c1, c2) = (F::one() - b1, F::one() - b2);
        let decay = match self.kind {
            OptimizerKind::Adam => None,
            OptimizerKind::AdamW { weight_decay } => Some(F::one() - lr * F::of(weight_decay)),
        };
        for ((p, m), v) in store.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            Zip::from(&mut p.value)
                .and(&mut p.grad)
                .and(m)
                .and(v)
                .for_each(|w, g, m, v| {
                    if let Some(d) = decay {
                        *w = *w * d;
                    }
                    *m = b1 * *m + c1 * *g;
                    *v = b2 * *v + c2 * *g * *g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *w = *w - lr * mhat / (vhat.sqrt() + eps);
                    *g = F::zero();
                });
        }
        true
    }
}
