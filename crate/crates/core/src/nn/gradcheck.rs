use rand::seq::index::sample;

use super::params::ParamStore;
use super::tape::{Tape, Var};
use super::Result;
use crate::rng::stream_rng;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Coordinates checked per parameter tensor; smaller tensors are checked
    /// exhaustively.
    pub coords_per_param: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            coords_per_param: 16,
            seed: 0,
        }
    }
}

/// Compares reverse-mode gradients of `loss_fn` against central differences.
///
/// Returns the maximum over sampled coordinates of
/// `|analytic - numeric| / max(1, |analytic|)`. The store's gradient buffers
/// are left zeroed.
pub fn finite_difference_check<L>(store: &mut ParamStore<f64>, mut loss_fn: L, opts: &GradCheckOptions) -> Result<f64>
where
    L: FnMut(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    store.zero_grad();
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, store)?;
    let grads = tape.backward(loss)?;
    store.accumulate(&tape, &grads);
    let analytic: Vec<_> = store.iter().map(|p| p.grad.clone()).collect();
    store.zero_grad();

    let mut eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let l = loss_fn(&mut tape, store)?;
        Ok(tape.scalar(l))
    };

    let mut rng = stream_rng(opts.seed, 0);
    let mut worst = 0.0_f64;
    for (pi, grad) in analytic.iter().enumerate() {
        let n = grad.len();
        let coords: Vec<usize> = if n <= opts.coords_per_param {
            (0..n).collect()
        } else {
            sample(&mut rng, n, opts.coords_per_param).into_vec()
        };
        let cols = grad.ncols();
        for c in coords {
            let (r, k) = (c / cols, c % cols);
            let id = super::ParamId(pi);
            let orig = store.get(id).value[[r, k]];
            store.get_mut(id).value[[r, k]] = orig + opts.epsilon;
            let plus = eval(store)?;
            store.get_mut(id).value[[r, k]] = orig - opts.epsilon;
            let minus = eval(store)?;
            store.get_mut(id).value[[r, k]] = orig;
            let numeric = (plus - minus) / (2.0 * opts.epsilon);
            let a = grad[[r, k]];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
