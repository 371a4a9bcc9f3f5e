//! Experiment orchestration: configuration, multi-seed runs with a manifest,
//! learning-curve aggregation and checkpoint evaluation.

mod evaluate;
mod report;
mod run;

pub use evaluate::{evaluate_checkpoint, load_policy};
pub use report::{aggregate_report, write_summary_csv, SummaryRow, SUMMARY_HEADER};
pub use run::{git_blob_hash, run_experiment, write_run_outputs, Manifest, ManifestInput, RunRecord, SeedFailure};

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::afdt::{AfdtConfig, AfdtError};
use crate::dataset::DatasetError;
use crate::guided_sac::{GuidedSacConfig, SacError, SacMode};
use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("{path}: header {got:?} does not match {expected:?}")]
    HeaderMismatch { path: PathBuf, expected: String, got: String },
    #[error("{path}: {reason}")]
    BadCsv { path: PathBuf, reason: String },
    #[error("checkpoint does not fit {env}: {reason}")]
    DimensionMismatch { env: String, reason: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Afdt(#[from] AfdtError),
    #[error(transparent)]
    Sac(#[from] SacError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Env(#[from] crate::envs::EnvError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

fn default_pretrain_seed() -> u64 {
    0
}

/// Everything a run needs. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: String,
    /// Action-free dataset used to pretrain planners.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    /// Pretrained return-conditioned planner; skips pretraining for the
    /// modes that use one.
    #[serde(default)]
    pub planner: Option<PathBuf>,
    #[serde(default)]
    pub afdt: AfdtConfig,
    #[serde(default)]
    pub sac: GuidedSacConfig,
    /// Modes to run; empty means `sac.mode` alone.
    #[serde(default)]
    pub modes: Vec<SacMode>,
    pub total_steps: usize,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub initial_rtg: f64,
    #[serde(default = "default_pretrain_seed")]
    pub pretrain_seed: u64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn resolved_modes(&self) -> Vec<SacMode> {
        if self.modes.is_empty() {
            vec![self.sac.mode]
        } else {
            self.modes.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::InvalidConfig(m));
        if !crate::envs::ENV_NAMES.contains(&self.env.as_str()) {
            return bad(format!("unknown env {:?}", self.env));
        }
        if self.seeds.is_empty() {
            return bad("no seeds".into());
        }
        let distinct: BTreeSet<u64> = self.seeds.iter().copied().collect();
        if distinct.len() != self.seeds.len() {
            return bad(format!("seeds are not distinct: {:?}", self.seeds));
        }
        if !self.initial_rtg.is_finite() {
            return bad("initial_rtg must be finite".into());
        }
        let modes = self.resolved_modes();
        if modes.iter().map(|m| m.as_str()).collect::<BTreeSet<_>>().len() != modes.len() {
            return bad(format!("repeated mode in {modes:?}"));
        }
        for path in self.dataset.iter().chain(&self.planner) {
            if !path.is_file() {
                return bad(format!("{} does not exist", path.display()));
            }
        }
        for m in &modes {
            let needs_data = match m {
                SacMode::Sac => false,
                SacMode::ImitationGuided => true,
                SacMode::Guided | SacMode::RewardMix => self.planner.is_none(),
            };
            if needs_data && self.dataset.is_none() {
                return bad(format!("mode {m} needs a dataset to pretrain its planner"));
            }
        }
        self.sac.validate()?;
        if self.dataset.is_some() {
            self.afdt.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"env": "corridor", "total_steps": 10, "seeds": [1, 2], "output_dir": "out", "initial_rtg": 150}"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.sac.beta, 3.0);
        assert_eq!(c.afdt.context_len, 20);
        assert_eq!(c.resolved_modes(), vec![SacMode::Guided]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("\"env\"", "\"learning_rate\": 1, \"env\"");
        assert!(matches!(ExperimentConfig::from_json(&text), Err(HarnessError::Json(_))));
        let nested = MINIMAL.replace("\"env\"", "\"sac\": {\"gama\": 0.5}, \"env\"");
        assert!(ExperimentConfig::from_json(&nested).is_err());
    }

    #[test]
    fn validation_catches_bad_inputs() {
        let mut c = ExperimentConfig::from_json(MINIMAL).unwrap();
        c.modes = vec![SacMode::Sac];
        c.validate().unwrap();
        c.seeds = vec![3, 3];
        assert!(c.validate().is_err());
        c.seeds = vec![3];
        c.modes = vec![SacMode::Guided];
        assert!(c.validate().is_err(), "guided without dataset or planner");
        c.dataset = Some("/nonexistent/file.afd".into());
        assert!(c.validate().is_err());
    }
}
