use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AfdtConfig, AfdtError, AfdtModel, PretrainReport, Result};
use crate::dataset::{NormStats, Window};
use crate::nn::{apply_entries, read_checkpoint, save_checkpoint};

/// Rolling online context: the last `K` states, returns-to-go and timesteps.
#[derive(Clone, Debug, PartialEq)]
pub struct PlannerContext {
    k: usize,
    states: VecDeque<Vec<f64>>,
    rtgs: VecDeque<f64>,
    timesteps: VecDeque<usize>,
    rtg: f64,
    t: usize,
}

impl PlannerContext {
    pub fn new(k: usize, initial_state: &[f64], initial_rtg: f64) -> Self {
        let mut c = Self {
            k: k.max(1),
            states: VecDeque::with_capacity(k),
            rtgs: VecDeque::with_capacity(k),
            timesteps: VecDeque::with_capacity(k),
            rtg: initial_rtg,
            t: 0,
        };
        c.push(initial_state.to_vec());
        c
    }

    fn push(&mut self, state: Vec<f64>) {
        if self.states.len() == self.k {
            self.states.pop_front();
            self.rtgs.pop_front();
            self.timesteps.pop_front();
        }
        self.states.push_back(state);
        self.rtgs.push_back(self.rtg);
        self.timesteps.push_back(self.t);
    }

    /// Records the transition out of the latest state: the return target
    /// drops by the reward received.
    pub fn update(&mut self, next_state: &[f64], reward: f64) {
        self.rtg -= reward;
        self.t += 1;
        self.push(next_state.to_vec());
    }

    pub fn rtg(&self) -> f64 {
        self.rtg
    }

    pub fn timestep(&self) -> usize {
        self.t
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn latest_state(&self) -> &[f64] {
        self.states.back().expect("context holds the initial state")
    }

    /// Left-padded window of length `K` ending at the latest state.
    pub fn window(&self) -> Window {
        let sd = self.latest_state().len();
        let mut w = Window::empty(self.k, sd);
        let offset = self.k - self.states.len();
        for (i, s) in self.states.iter().enumerate() {
            let slot = offset + i;
            w.states.row_mut(slot).iter_mut().zip(s).for_each(|(d, v)| *d = *v);
            w.rtgs[slot] = self.rtgs[i];
            w.timesteps[slot] = self.timesteps[i];
            w.valid[slot] = true;
        }
        w
    }
}

/// A trained planner ready to propose target next states.
#[derive(Clone, Debug)]
pub struct Planner {
    pub model: AfdtModel<f32>,
}

impl Planner {
    pub fn new(model: AfdtModel<f32>) -> Self {
        Self { model }
    }

    pub fn context_len(&self) -> usize {
        self.model.config.context_len
    }

    pub fn norm(&self) -> &NormStats {
        &self.model.norm
    }

    pub fn context(&self, initial_state: &[f64], initial_rtg: f64) -> PlannerContext {
        PlannerContext::new(self.context_len(), initial_state, initial_rtg)
    }

    /// Predicted next state for the latest state in `ctx`.
    pub fn plan(&self, ctx: &PlannerContext) -> Result<Vec<f64>> {
        if ctx.latest_state().len() != self.model.state_dim {
            return Err(AfdtError::Shape(format!(
                "context state_dim {} but planner expects {}",
                ctx.latest_state().len(),
                self.model.state_dim
            )));
        }
        let mut out = self.model.predict_last(&[ctx.window()])?;
        Ok(out.pop().expect("one window"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerSidecar {
    pub config: AfdtConfig,
    pub state_dim: usize,
    pub norm_stats: NormStats,
    pub report: Option<PretrainReport>,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes the parameters to `path` and the configuration and statistics to
/// `path` + `.json`.
pub fn save_planner(model: &AfdtModel<f32>, report: Option<&PretrainReport>, path: &Path) -> Result<()> {
    save_checkpoint(&model.store, path)?;
    let sidecar = PlannerSidecar {
        config: model.config.clone(),
        state_dim: model.state_dim,
        norm_stats: model.norm.clone(),
        report: report.cloned(),
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

pub fn load_planner(path: &Path) -> Result<(Planner, PlannerSidecar)> {
    let sidecar: PlannerSidecar = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
    let mut model = AfdtModel::<f32>::new(sidecar.config.clone(), sidecar.state_dim, sidecar.norm_stats.clone(), 0)?;
    let entries = read_checkpoint(std::io::BufReader::new(fs::File::open(path)?))?;
    apply_entries(&mut model.store, &entries)?;
    Ok((Planner::new(model), sidecar))
}
