use rand::Rng as _;

use super::{clip_action, EnvError, EnvSpec, Environment, RewardKind, StepOutcome, DT, FRICTION, MAX_EPISODE_STEPS, V_MAX};
use crate::rng::{stream, stream_rng};

pub const LENGTH: f64 = 15.0;
const START_MAX: f64 = 1.0;
const SUCCESS_X: f64 = LENGTH - 0.5;

/// 1-D track `[0, LENGTH]` with state `[x, v]`; the dense reward is the
/// post-step velocity, so an episode's return is its net displacement / dt.
#[derive(Clone, Debug)]
pub struct Corridor {
    spec: EnvSpec,
    state: [f64; 2],
    t: usize,
    over: bool,
}

impl Default for Corridor {
    fn default() -> Self {
        Self::new()
    }
}

impl Corridor {
    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                name: "corridor".into(),
                state_dim: 2,
                action_dim: 1,
                max_episode_steps: MAX_EPISODE_STEPS,
                reward_kind: RewardKind::Dense,
            },
            state: [0.0; 2],
            t: 0,
            over: false,
        }
    }

    /// Places the mass at an arbitrary state; used by tests and probes.
    pub fn set_state(&mut self, x: f64, v: f64) {
        self.state = [x, v];
        self.t = 0;
        self.over = false;
    }
}

impl Environment for Corridor {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = stream_rng(seed, stream::ENV);
        self.set_state(rng.random_range(0.0..START_MAX), 0.0);
        self.state.to_vec()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome, EnvError> {
        if self.over {
            return Err(EnvError::EpisodeOver);
        }
        let a = clip_action(action, 1)?[0];
        let [x, v] = self.state;
        let mut v = ((1.0 - FRICTION) * v + DT * a).clamp(-V_MAX, V_MAX);
        let mut x = x + DT * v;
        if x < 0.0 {
            x = 0.0;
            v = 0.0;
        } else if x > LENGTH {
            x = LENGTH;
            v = 0.0;
        }
        self.state = [x, v];
        self.t += 1;
        let done = self.t >= self.spec.max_episode_steps;
        self.over = done;
        Ok(StepOutcome {
            state: self.state.to_vec(),
            reward: v,
            done,
            terminal: false,
            success: x >= SUCCESS_X,
        })
    }

    fn state(&self) -> &[f64] {
        &self.state
    }

    /// Saturated forward push.
    fn expert_action(&self, state: &[f64]) -> Vec<f64> {
        vec![if state[1] < V_MAX { 1.0 } else { 0.0 }]
    }

    fn in_start_region(&self, state: &[f64]) -> bool {
        (0.0..START_MAX).contains(&state[0]) && state[1] == 0.0
    }
}
