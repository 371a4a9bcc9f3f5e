//! Action-free decision transformer: a return-conditioned causal sequence
//! model over `(state, return-to-go)` tokens that predicts the change to the
//! next state.

mod model;
mod planner;
mod train;

pub use model::{AfdtModel, WindowBatch};
pub use planner::{load_planner, save_planner, Planner, PlannerContext, PlannerSidecar};
pub use train::{evaluate_l1, pretrain, train_step, CheckpointRecord, PretrainReport};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{NnError, TransformerSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerMode {
    /// Conditioned on returns-to-go.
    Udrl,
    /// Return inputs replaced by a constant zero; pure next-state regression.
    Imitation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AfdtConfig {
    pub context_len: usize,
    pub transformer: TransformerSpec,
    /// Divisor applied to returns-to-go before embedding.
    pub rtg_scale: f64,
    pub mode: PlannerMode,
    pub train_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub checkpoint_steps: Vec<usize>,
    pub val_fraction: f64,
    pub val_windows: usize,
    /// Largest absolute episode timestep the position table can embed.
    pub max_timestep: usize,
}

impl Default for AfdtConfig {
    fn default() -> Self {
        Self {
            context_len: 20,
            transformer: TransformerSpec {
                max_tokens: 40,
                ..TransformerSpec::default()
            },
            rtg_scale: 1.0,
            mode: PlannerMode::Udrl,
            train_steps: 50_000,
            batch_size: 64,
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            checkpoint_steps: vec![3000, 5000, 10_000, 15_000, 30_000, 50_000],
            val_fraction: 0.1,
            val_windows: 256,
            max_timestep: crate::envs::MAX_EPISODE_STEPS,
        }
    }
}

impl AfdtConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AfdtError::InvalidConfig(m));
        if self.context_len == 0 {
            return bad("context_len must be >= 1".into());
        }
        if !(self.rtg_scale > 0.0 && self.rtg_scale.is_finite()) {
            return bad(format!("rtg_scale must be positive, got {}", self.rtg_scale));
        }
        if self.transformer.max_tokens < 2 * self.context_len {
            return bad(format!(
                "transformer.max_tokens {} below 2 * context_len {}",
                self.transformer.max_tokens, self.context_len
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("val_fraction {} outside [0, 1)", self.val_fraction));
        }
        if !self.checkpoint_steps.iter().any(|&s| s >= 1 && s <= self.train_steps) {
            return bad(format!(
                "no checkpoint step in 1..={} among {:?}",
                self.train_steps, self.checkpoint_steps
            ));
        }
        self.transformer.validate()?;
        Ok(())
    }

    /// Default return scale for the built-in environments.
    pub fn rtg_scale_for(env: &str) -> f64 {
        match env {
            "corridor" | "pointmaze-dense" => 100.0,
            _ => 1.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum AfdtError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
    #[error("invalid AFDT config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("timestep {t} outside embedding table (max {max})")]
    TimestepOutOfRange { t: usize, max: usize },
    #[error("planner context is empty")]
    EmptyContext,
    #[error("sidecar: {0}")]
    Sidecar(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, AfdtError>;
