use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Environment;
use crate::rng::Rng;

const MEDIUM_NOISE_STD: f64 = 0.5;
const MEDIUM_RANDOM_PROB: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Expert,
    Medium,
    Random,
}

impl std::str::FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "expert" => Ok(Self::Expert),
            "medium" => Ok(Self::Medium),
            "random" => Ok(Self::Random),
            other => Err(format!("unknown policy kind {other:?}; expected expert, medium or random")),
        }
    }
}

/// Behaviour policy used to generate offline data.
///
/// `Medium` perturbs the expert with Gaussian noise (std 0.5) and replaces
/// 20% of its actions with uniform random ones.
pub struct ScriptedPolicy {
    pub kind: PolicyKind,
    rng: Rng,
}

impl ScriptedPolicy {
    pub fn new(kind: PolicyKind, rng: Rng) -> Self {
        Self { kind, rng }
    }

    pub fn act(&mut self, env: &dyn Environment, state: &[f64]) -> Vec<f64> {
        let dim = env.spec().action_dim;
        match self.kind {
            PolicyKind::Expert => env.expert_action(state),
            PolicyKind::Random => self.uniform(dim),
            PolicyKind::Medium => {
                if self.rng.random::<f64>() < MEDIUM_RANDOM_PROB {
                    self.uniform(dim)
                } else {
                    let noise = Normal::new(0.0, MEDIUM_NOISE_STD).expect("valid std");
                    env.expert_action(state)
                        .into_iter()
                        .map(|a| (a + noise.sample(&mut self.rng)).clamp(-1.0, 1.0))
                        .collect()
                }
            }
        }
    }

    fn uniform(&mut self, dim: usize) -> Vec<f64> {
        (0..dim).map(|_| self.rng.random_range(-1.0..=1.0)).collect()
    }
}
