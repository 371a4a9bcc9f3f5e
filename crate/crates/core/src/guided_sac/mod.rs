//! Soft actor-critic steered by a planner: twin discounted critics for the
//! environment reward, an undiscounted critic for the guiding reward, and a
//! policy trained on their weighted sum.

mod agent;
mod buffer;
mod train;

pub use agent::{GuidedSacAgent, UpdateStats, ACTION_LIMIT, LOG_STD_MAX, LOG_STD_MIN};
pub use buffer::{Batch, ReplayBuffer, Transition};
pub use train::{collect_step, evaluate_policy, train, write_curve_csv, EvalRow, EvalSummary, Rollout, TrainRun, CURVE_HEADER};

use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::NnError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SacMode {
    Guided,
    Sac,
    RewardMix,
    ImitationGuided,
}

impl SacMode {
    pub const ALL: [SacMode; 4] = [SacMode::Guided, SacMode::Sac, SacMode::RewardMix, SacMode::ImitationGuided];

    pub fn as_str(self) -> &'static str {
        match self {
            SacMode::Guided => "guided",
            SacMode::Sac => "sac",
            SacMode::RewardMix => "reward_mix",
            SacMode::ImitationGuided => "imitation_guided",
        }
    }

    /// Whether rollouts query a planner for the guiding reward.
    pub fn uses_planner(self) -> bool {
        self != SacMode::Sac
    }

    /// Whether a separate guiding critic is trained.
    pub fn has_guide_critic(self) -> bool {
        matches!(self, SacMode::Guided | SacMode::ImitationGuided)
    }
}

impl std::fmt::Display for SacMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SacMode {
    type Err = SacError;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "guided" => Ok(SacMode::Guided),
            "sac" => Ok(SacMode::Sac),
            "reward_mix" => Ok(SacMode::RewardMix),
            "imitation_guided" => Ok(SacMode::ImitationGuided),
            _ => Err(SacError::InvalidConfig(format!("unknown mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidedSacConfig {
    pub mode: SacMode,
    pub gamma: f64,
    pub beta: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub tau: f64,
    pub buffer_capacity: usize,
    pub warmup_steps: usize,
    pub gradient_steps: usize,
    pub hidden_dim: usize,
    pub n_hidden_layers: usize,
    pub initial_alpha: f64,
    /// Defaults to `-action_dim`.
    pub target_entropy: Option<f64>,
    /// Disables temperature learning when set.
    pub fixed_alpha: Option<f64>,
    pub eval_every: usize,
    pub eval_episodes: usize,
}

impl Default for GuidedSacConfig {
    fn default() -> Self {
        Self {
            mode: SacMode::Guided,
            gamma: 0.99,
            beta: 3.0,
            batch_size: 256,
            learning_rate: 3e-4,
            tau: 0.005,
            buffer_capacity: 1_000_000,
            warmup_steps: 1000,
            gradient_steps: 1,
            hidden_dim: 256,
            n_hidden_layers: 3,
            initial_alpha: 1.0,
            target_entropy: None,
            fixed_alpha: None,
            eval_every: 1000,
            eval_episodes: 10,
        }
    }
}

impl GuidedSacConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SacError::InvalidConfig(m));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1)", self.gamma));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta {} must be finite and >= 0", self.beta));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau {} outside (0, 1]", self.tau));
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 || self.eval_every == 0 {
            return bad("batch_size, buffer_capacity and eval_every must be >= 1".into());
        }
        if self.hidden_dim == 0 {
            return bad("hidden_dim must be >= 1".into());
        }
        if !(self.initial_alpha > 0.0) || self.fixed_alpha.is_some_and(|a| !(a >= 0.0)) {
            return bad("temperature must be positive".into());
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SacError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Env(#[from] crate::envs::EnvError),
    #[error("invalid SAC config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite {0}; update aborted")]
    NonFinite(&'static str),
    #[error("mode {0} needs a planner")]
    MissingPlanner(SacMode),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SacError>;

/// Negative sigma-weighted distance between the planned and reached state.
pub fn guiding_reward(planned: &[f64], reached: &[f64], divisors: &[f64]) -> Result<f64> {
    if planned.len() != reached.len() || planned.len() != divisors.len() {
        return Err(SacError::Shape(format!(
            "planned {}, reached {}, sigma {}",
            planned.len(),
            reached.len(),
            divisors.len()
        )));
    }
    let sq: f64 = planned
        .iter()
        .zip(reached)
        .zip(divisors)
        .map(|((p, r), s)| {
            let e = (p - r) / s;
            e * e
        })
        .sum();
    Ok(-sq.sqrt())
}
