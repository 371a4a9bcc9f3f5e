use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::Array2;

use super::tape::{Gradients, Tape};
use super::Real;

static NEXT_STORE: AtomicU64 = AtomicU64::new(1);

fn fresh_store_id() -> u64 {
    NEXT_STORE.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named learnable matrix and its gradient accumulator.
#[derive(Clone, Debug)]
pub struct ParamTensor<F> {
    pub name: String,
    pub value: Array2<F>,
    pub grad: Array2<F>,
}

impl<F: Real> ParamTensor<F> {
    pub fn shape(&self) -> [usize; 2] {
        [self.value.nrows(), self.value.ncols()]
    }
}

/// Ordered collection of parameters. Each store has a process-unique id that
/// the tape uses to route gradients back; clones receive a new id.
#[derive(Debug)]
pub struct ParamStore<F> {
    id: u64,
    params: Vec<ParamTensor<F>>,
}

impl<F: Real> Clone for ParamStore<F> {
    fn clone(&self) -> Self {
        Self {
            id: fresh_store_id(),
            params: self.params.clone(),
        }
    }
}

impl<F: Real> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            id: fresh_store_id(),
            params: Vec::new(),
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<F>) -> ParamId {
        let grad = Array2::zeros(value.raw_dim());
        self.params.push(ParamTensor {
            name: name.into(),
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor<F> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor<F> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Array2<F> {
        &self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamTensor<F>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor<F>> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(F::zero());
        }
    }

    /// Adds the gradients of every node on `tape` bound to this store.
    /// Parameters that did not take part in the graph are left untouched.
    pub fn accumulate(&mut self, tape: &Tape<F>, grads: &Gradients<F>) {
        for (id, g) in tape.param_grads(self.id, grads) {
            self.params[id.0].grad += g;
        }
    }

    pub fn grads_finite(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.grad.iter().all(|g| g.is_finite()))
    }

    /// Copies values from a store with identical layout.
    pub fn copy_values_from(&mut self, other: &ParamStore<F>) {
        assert_eq!(self.params.len(), other.params.len(), "store layout mismatch");
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            dst.value.assign(&src.value);
        }
    }

    /// `self = tau * online + (1 - tau) * self`, element by element.
    pub fn polyak_from(&mut self, online: &ParamStore<F>, tau: f64) {
        assert_eq!(self.params.len(), online.params.len(), "store layout mismatch");
        let tau = F::of(tau);
        let keep = F::one() - tau;
        for (dst, src) in self.params.iter_mut().zip(&online.params) {
            ndarray::Zip::from(&mut dst.value)
                .and(&src.value)
                .for_each(|t, &o| *t = tau * o + keep * *t);
        }
    }

    /// Converts element type, keeping names and layout.
    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            id: fresh_store_id(),
            params: self
                .params
                .iter()
                .map(|p| ParamTensor {
                    name: p.name.clone(),
                    value: p.value.mapv(|v| G::of(v.f64())),
                    grad: Array2::zeros(p.value.raw_dim()),
                })
                .collect(),
        }
    }

    /// Flat copy of all parameter values in store order.
    pub fn flat_values(&self) -> Vec<F> {
        self.params.iter().flat_map(|p| p.value.iter().copied()).collect()
    }
}
