use ndarray::Array2;
use rand::Rng as _;

use super::ActionFreeDataset;
use crate::rng::Rng;

/// A left-padded context of `K` steps ending at some step of a trajectory.
///
/// Slot `K - 1` is always the latest step. Padded slots are zero and have
/// `valid == false`. `next_states` / `has_next` carry the successor of each
/// slot, which is absent for padding and for the final step of an episode.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub states: Array2<f64>,
    pub rtgs: Vec<f64>,
    pub timesteps: Vec<usize>,
    pub valid: Vec<bool>,
    pub next_states: Array2<f64>,
    pub has_next: Vec<bool>,
}

impl Window {
    pub fn empty(k: usize, state_dim: usize) -> Self {
        Self {
            states: Array2::zeros((k, state_dim)),
            rtgs: vec![0.0; k],
            timesteps: vec![0; k],
            valid: vec![false; k],
            next_states: Array2::zeros((k, state_dim)),
            has_next: vec![false; k],
        }
    }

    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }

    pub fn n_valid(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Window of length `k` ending at step `end` of trajectory `traj`.
pub fn window_at(dataset: &ActionFreeDataset, traj: usize, end: usize, k: usize) -> Window {
    let t = &dataset.trajectories()[traj];
    let rtg = dataset.rtg(traj);
    assert!(end < t.len(), "end index {end} outside trajectory of length {}", t.len());
    let mut w = Window::empty(k, dataset.state_dim());
    let start = (end + 1).saturating_sub(k);
    let offset = k - (end + 1 - start);
    for (slot, step) in (offset..k).zip(start..=end) {
        w.states
            .row_mut(slot)
            .iter_mut()
            .zip(t.states().row(step))
            .for_each(|(d, &s)| *d = s as f64);
        w.rtgs[slot] = rtg[step];
        w.timesteps[slot] = step;
        w.valid[slot] = true;
        if step + 1 < t.len() {
            w.next_states
                .row_mut(slot)
                .iter_mut()
                .zip(t.states().row(step + 1))
                .for_each(|(d, &s)| *d = s as f64);
            w.has_next[slot] = true;
        }
    }
    w
}

/// Draws `batch` windows with end points uniform over every
/// `(trajectory, step)` pair in the dataset.
pub fn sample_windows(dataset: &ActionFreeDataset, batch: usize, k: usize, rng: &mut Rng) -> Vec<Window> {
    let mut cumulative = Vec::with_capacity(dataset.len());
    let mut total = 0usize;
    for t in dataset.trajectories() {
        total += t.len();
        cumulative.push(total);
    }
    (0..batch)
        .map(|_| {
            let g = rng.random_range(0..total);
            let traj = cumulative.partition_point(|&c| c <= g);
            let before = if traj == 0 { 0 } else { cumulative[traj - 1] };
            window_at(dataset, traj, g - before, k)
        })
        .collect()
}
