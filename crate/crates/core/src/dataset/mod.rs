//! Action-free trajectory data: storage, returns-to-go, normalisation
//! statistics, context-window sampling, generation and the `AFD1` file format.

mod format;
mod generate;
mod window;

pub use format::{load, read_dataset, save, write_dataset, MAGIC, VERSION};
pub use generate::{generate_behavior_dataset, GeneratedDataset};
pub use window::{sample_windows, window_at, Window};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dimensions with a standard deviation below this are treated as constant.
pub const DEGENERATE_SIGMA: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated header")]
    TruncatedHeader,
    #[error("truncated payload in trajectory {0}")]
    TruncatedPayload(usize),
    #[error("non-finite value in trajectory {0}")]
    NonFinite(usize),
    #[error("invalid trajectory {index}: {reason}")]
    InvalidTrajectory { index: usize, reason: String },
    #[error("trailing bytes after trajectory {0}")]
    TrailingBytes(usize),
    #[error("dataset is empty")]
    Empty,
    #[error(transparent)]
    Env(#[from] crate::envs::EnvError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

/// One episode of `(state, reward)` pairs; `rewards[t]` is the reward
/// received on leaving `states[t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    states: Array2<f32>,
    rewards: Vec<f32>,
}

impl Trajectory {
    pub fn new(states: Array2<f32>, rewards: Vec<f32>) -> std::result::Result<Self, String> {
        if states.nrows() != rewards.len() {
            return Err(format!("{} states but {} rewards", states.nrows(), rewards.len()));
        }
        if rewards.len() < 2 {
            return Err(format!("length {} < 2", rewards.len()));
        }
        if states.ncols() == 0 {
            return Err("state_dim is zero".into());
        }
        if !states.iter().chain(&rewards).all(|v| v.is_finite()) {
            return Err("non-finite value".into());
        }
        Ok(Self { states, rewards })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn states(&self) -> &Array2<f32> {
        &self.states
    }

    pub fn rewards(&self) -> &[f32] {
        &self.rewards
    }

    pub fn state_dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn episode_return(&self) -> f64 {
        self.rewards.iter().map(|&r| r as f64).sum()
    }
}

/// Returns-to-go: `out[t] = sum(rewards[t..])`.
pub fn compute_rtg(rewards: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (o, &r) in out.iter_mut().zip(rewards).rev() {
        acc += r;
        *o = acc;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    /// Population standard deviation per dimension.
    pub sigma: Vec<f64>,
    pub degenerate: Vec<bool>,
}

impl NormStats {
    pub fn unit(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            sigma: vec![1.0; dim],
            degenerate: vec![false; dim],
        }
    }

    /// Per-dimension divisor used by the guiding reward; constant dimensions
    /// divide by one.
    pub fn divisors(&self) -> Vec<f64> {
        self.sigma
            .iter()
            .zip(&self.degenerate)
            .map(|(&s, &d)| if d { 1.0 } else { s })
            .collect()
    }
}

/// Welford accumulation over every state of every trajectory.
pub fn compute_state_std(trajectories: &[Trajectory]) -> Result<NormStats> {
    let dim = trajectories.first().ok_or(DatasetError::Empty)?.state_dim();
    let mut n = 0usize;
    let mut mean = vec![0.0f64; dim];
    let mut m2 = vec![0.0f64; dim];
    for traj in trajectories {
        for row in traj.states.rows() {
            n += 1;
            for (i, &x) in row.iter().enumerate() {
                let x = x as f64;
                let delta = x - mean[i];
                mean[i] += delta / n as f64;
                m2[i] += delta * (x - mean[i]);
            }
        }
    }
    if n < 2 {
        return Err(DatasetError::Empty);
    }
    let sigma: Vec<f64> = m2.iter().map(|&m| (m / n as f64).max(0.0).sqrt()).collect();
    let degenerate = sigma.iter().map(|&s| s < DEGENERATE_SIGMA).collect();
    Ok(NormStats { mean, sigma, degenerate })
}

/// Immutable collection of trajectories with cached statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionFreeDataset {
    state_dim: usize,
    trajectories: Vec<Trajectory>,
    norm_stats: NormStats,
    rtg_cache: Vec<Vec<f64>>,
}

impl ActionFreeDataset {
    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self> {
        let state_dim = trajectories.first().ok_or(DatasetError::Empty)?.state_dim();
        for (index, t) in trajectories.iter().enumerate() {
            if t.state_dim() != state_dim {
                return Err(DatasetError::InvalidTrajectory {
                    index,
                    reason: format!("state_dim {} differs from {state_dim}", t.state_dim()),
                });
            }
        }
        let norm_stats = compute_state_std(&trajectories)?;
        let rtg_cache = trajectories
            .iter()
            .map(|t| compute_rtg(&t.rewards.iter().map(|&r| r as f64).collect::<Vec<_>>()))
            .collect();
        Ok(Self {
            state_dim,
            trajectories,
            norm_stats,
            rtg_cache,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn norm_stats(&self) -> &NormStats {
        &self.norm_stats
    }

    pub fn rtg(&self, trajectory: usize) -> &[f64] {
        &self.rtg_cache[trajectory]
    }

    pub fn total_steps(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    /// Dataset restricted to the given trajectory indices.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Self::new(indices.iter().map(|&i| self.trajectories[i].clone()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn traj(states: Array2<f32>, rewards: Vec<f32>) -> Trajectory {
        Trajectory::new(states, rewards).unwrap()
    }

    #[test]
    fn rtg_suffix_sums() {
        assert_eq!(compute_rtg(&[1.0, 2.0, 3.0]), vec![6.0, 5.0, 3.0]);
        assert_eq!(compute_rtg(&[0.0; 4]), vec![0.0; 4]);
    }

    #[test]
    fn rtg_matches_reverse_scan_oracle() {
        let mut rng = crate::rng::stream_rng(5, 0);
        let r: Vec<f64> = (0..1000).map(|_| rng.random_range(-3.0..3.0)).collect();
        // Oracle: reverse the sequence, take a running sum, reverse back.
        let mut rev: Vec<f64> = r.iter().rev().scan(0.0, |acc, &x| {
            *acc += x;
            Some(*acc)
        }).collect();
        rev.reverse();
        assert_eq!(compute_rtg(&r), rev);
    }

    #[test]
    fn population_std_of_two_points() {
        let d = ActionFreeDataset::new(vec![traj(array![[0.0], [2.0]], vec![0.0, 0.0])]).unwrap();
        assert!((d.norm_stats().sigma[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_dimension_is_flagged() {
        let d = ActionFreeDataset::new(vec![traj(array![[3.0, 1.0], [3.0, 2.0], [3.0, 4.0]], vec![0.0; 3])]).unwrap();
        assert_eq!(d.norm_stats().sigma[0], 0.0);
        assert!(d.norm_stats().degenerate[0]);
        assert!(!d.norm_stats().degenerate[1]);
        assert_eq!(d.norm_stats().divisors()[0], 1.0);
    }

    #[test]
    fn std_matches_two_pass_oracle() {
        let mut rng = crate::rng::stream_rng(9, 0);
        let trajs: Vec<Trajectory> = (0..7)
            .map(|i| {
                let t = 5 + i * 3;
                let s = Array2::from_shape_simple_fn((t, 3), || rng.random_range(-50.0f32..80.0));
                traj(s, vec![0.0; t])
            })
            .collect();
        let stats = compute_state_std(&trajs).unwrap();
        let all: Vec<Vec<f64>> = trajs
            .iter()
            .flat_map(|t| t.states().rows().into_iter().map(|r| r.iter().map(|&v| v as f64).collect::<Vec<_>>()).collect::<Vec<_>>())
            .collect();
        let n = all.len() as f64;
        for d in 0..3 {
            let mean = all.iter().map(|r| r[d]).sum::<f64>() / n;
            let var = all.iter().map(|r| (r[d] - mean).powi(2)).sum::<f64>() / n;
            assert!((stats.sigma[d] - var.sqrt()).abs() < 1e-10);
        }
        assert_eq!(compute_state_std(&trajs).unwrap(), stats);
    }

    #[test]
    fn empty_and_invalid_are_rejected() {
        assert!(matches!(ActionFreeDataset::new(vec![]), Err(DatasetError::Empty)));
        assert!(Trajectory::new(array![[1.0f32]], vec![0.0]).is_err());
        assert!(Trajectory::new(array![[1.0f32], [f32::NAN]], vec![0.0, 0.0]).is_err());
        let mixed = vec![traj(array![[1.0], [2.0]], vec![0.0; 2]), traj(array![[1.0, 2.0], [2.0, 3.0]], vec![0.0; 2])];
        assert!(matches!(ActionFreeDataset::new(mixed), Err(DatasetError::InvalidTrajectory { index: 1, .. })));
    }

    proptest! {
        #[test]
        fn rtg_telescopes(r in prop::collection::vec(-100.0f64..100.0, 1..200)) {
            let g = compute_rtg(&r);
            for t in 0..r.len() - 1 {
                let diff = g[t] - g[t + 1];
                prop_assert!((diff - r[t]).abs() <= 1e-9 * (1.0 + g[t].abs()));
            }
            prop_assert_eq!(g[r.len() - 1], r[r.len() - 1]);
        }

        #[test]
        fn integer_rewards_telescope_exactly(r in prop::collection::vec(-50i32..50, 1..300)) {
            let r: Vec<f64> = r.into_iter().map(f64::from).collect();
            let g = compute_rtg(&r);
            for t in 0..r.len() - 1 {
                prop_assert_eq!(g[t] - g[t + 1], r[t]);
            }
        }
    }
}
