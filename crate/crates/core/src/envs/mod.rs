//! Deterministic toy continuous-control tasks and scripted behaviour policies.
//!
//! Both environments integrate a point mass with semi-implicit Euler:
//! `v' = clamp((1 - friction) v + dt a)`, `x' = x + dt v'`. Actions are
//! accelerations clipped to `[-1, 1]` per dimension.

mod corridor;
mod pointmaze;
mod scripted;

pub use corridor::Corridor;
pub use pointmaze::{PointMaze, Wall};
pub use scripted::{PolicyKind, ScriptedPolicy};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DT: f64 = 0.1;
pub const FRICTION: f64 = 0.05;
pub const V_MAX: f64 = 5.0;
pub const MAX_EPISODE_STEPS: usize = 300;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    Sparse,
    Dense,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub max_episode_steps: usize,
    pub reward_kind: RewardKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: Vec<f64>,
    pub reward: f64,
    /// Episode over, by goal entry or by the step limit.
    pub done: bool,
    /// Episode over because of a true terminal state (not a time limit).
    pub terminal: bool,
    /// Task goal reached on this step.
    pub success: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("unknown environment {0:?}; expected pointmaze-sparse, pointmaze-dense or corridor")]
    UnknownEnv(String),
    #[error("action has {got} dims, environment expects {expected}")]
    ActionDim { expected: usize, got: usize },
    #[error("non-finite action component {0}")]
    NonFiniteAction(f64),
    #[error("step called on a finished episode; call reset first")]
    EpisodeOver,
}

pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;

    /// Starts a new episode from a start state drawn from a stream keyed on `seed`.
    fn reset(&mut self, seed: u64) -> Vec<f64>;

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome, EnvError>;

    fn state(&self) -> &[f64];

    /// Action of the scripted expert controller in `state`.
    fn expert_action(&self, state: &[f64]) -> Vec<f64>;

    /// Whether `state` lies inside the region start states are drawn from.
    fn in_start_region(&self, state: &[f64]) -> bool;
}

pub const ENV_NAMES: [&str; 3] = ["pointmaze-sparse", "pointmaze-dense", "corridor"];

pub fn make_env(name: &str) -> Result<Box<dyn Environment>, EnvError> {
    match name {
        "pointmaze-sparse" => Ok(Box::new(PointMaze::new(RewardKind::Sparse))),
        "pointmaze-dense" => Ok(Box::new(PointMaze::new(RewardKind::Dense))),
        "corridor" => Ok(Box::new(Corridor::new())),
        other => Err(EnvError::UnknownEnv(other.to_string())),
    }
}

pub(crate) fn clip_action(action: &[f64], expected: usize) -> Result<Vec<f64>, EnvError> {
    if action.len() != expected {
        return Err(EnvError::ActionDim {
            expected,
            got: action.len(),
        });
    }
    action
        .iter()
        .map(|&a| {
            if a.is_finite() {
                Ok(a.clamp(-1.0, 1.0))
            } else {
                Err(EnvError::NonFiniteAction(a))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_resolve() {
        for n in ENV_NAMES {
            assert_eq!(make_env(n).unwrap().spec().name, n);
        }
        assert!(matches!(make_env("hopper"), Err(EnvError::UnknownEnv(_))));
    }

    #[test]
    fn episode_bound_holds_for_every_env() {
        for n in ENV_NAMES {
            let mut env = make_env(n).unwrap();
            env.reset(3);
            let limit = env.spec().max_episode_steps;
            let mut steps = 0;
            loop {
                let a = vec![0.3; env.spec().action_dim];
                let out = env.step(&a).unwrap();
                steps += 1;
                if out.done {
                    break;
                }
                assert!(steps < limit);
            }
            assert!(steps <= limit);
            assert_eq!(env.step(&vec![0.0; env.spec().action_dim]), Err(EnvError::EpisodeOver));
        }
    }
}
