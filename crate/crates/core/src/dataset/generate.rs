use ndarray::Array2;

use super::{ActionFreeDataset, Result, Trajectory};
use crate::envs::{make_env, PolicyKind, ScriptedPolicy};
use crate::rng::{mix_seed, stream, stream_rng};

/// A generated dataset plus per-episode outcomes kept for reporting only.
#[derive(Clone, Debug)]
pub struct GeneratedDataset {
    pub dataset: ActionFreeDataset,
    pub episode_returns: Vec<f64>,
    pub successes: Vec<bool>,
}

impl GeneratedDataset {
    pub fn success_fraction(&self) -> f64 {
        self.successes.iter().filter(|s| **s).count() as f64 / self.successes.len().max(1) as f64
    }

    pub fn mean_return(&self) -> f64 {
        self.episode_returns.iter().sum::<f64>() / self.episode_returns.len().max(1) as f64
    }
}

/// Rolls out a scripted behaviour policy and keeps only states and rewards.
///
/// Each trajectory holds `s_0 .. s_T` with `r_t` the reward for the step out
/// of `s_t`; the final state carries reward 0.
pub fn generate_behavior_dataset(env_name: &str, policy: PolicyKind, n_episodes: usize, seed: u64) -> Result<GeneratedDataset> {
    let mut env = make_env(env_name)?;
    let mut behavior = ScriptedPolicy::new(policy, stream_rng(seed, stream::BEHAVIOR));
    let dim = env.spec().state_dim;
    let mut trajectories = Vec::with_capacity(n_episodes);
    let mut episode_returns = Vec::with_capacity(n_episodes);
    let mut successes = Vec::with_capacity(n_episodes);
    for ep in 0..n_episodes {
        let mut state = env.reset(mix_seed(seed, ep as u64));
        let mut states: Vec<f32> = state.iter().map(|&v| v as f32).collect();
        let mut rewards: Vec<f32> = Vec::new();
        let mut ret = 0.0;
        let mut success = false;
        loop {
            let action = behavior.act(env.as_ref(), &state);
            let out = env.step(&action)?;
            rewards.push(out.reward as f32);
            ret += out.reward;
            success |= out.success;
            states.extend(out.state.iter().map(|&v| v as f32));
            state = out.state;
            if out.done {
                break;
            }
        }
        rewards.push(0.0);
        let len = rewards.len();
        let states = Array2::from_shape_vec((len, dim), states).expect("state buffer");
        trajectories.push(Trajectory::new(states, rewards).map_err(|reason| super::DatasetError::InvalidTrajectory { index: ep, reason })?);
        episode_returns.push(ret);
        successes.push(success);
    }
    Ok(GeneratedDataset {
        dataset: ActionFreeDataset::new(trajectories)?,
        episode_returns,
        successes,
    })
}
