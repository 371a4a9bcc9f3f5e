use rand::Rng as _;

use super::{clip_action, EnvError, EnvSpec, Environment, RewardKind, StepOutcome, DT, FRICTION, MAX_EPISODE_STEPS, V_MAX};
use crate::rng::{stream, stream_rng};

pub const SIZE: f64 = 5.0;
pub const GOAL: [f64; 2] = [1.0, 3.9];
pub const GOAL_RADIUS: f64 = 0.5;
const START_MIN: [f64; 2] = [0.5, 0.5];
const START_MAX: [f64; 2] = [1.5, 1.5];

/// Axis-aligned solid wall with a non-empty interior.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Wall {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Wall {
    /// Strict interior test with tolerance `tol`.
    pub fn contains(&self, p: [f64; 2], tol: f64) -> bool {
        (0..2).all(|i| p[i] > self.min[i] + tol && p[i] < self.max[i] - tol)
    }
}

/// U-shaped maze in `[0, SIZE]^2`. A wall juts in from the left edge, so the
/// route from the bottom-left start to the top-left goal runs around its
/// right end. State is `[x, y, vx, vy]`.
#[derive(Clone, Debug)]
pub struct PointMaze {
    spec: EnvSpec,
    walls: Vec<Wall>,
    state: [f64; 4],
    t: usize,
    over: bool,
}

impl PointMaze {
    pub fn new(reward_kind: RewardKind) -> Self {
        let name = match reward_kind {
            RewardKind::Sparse => "pointmaze-sparse",
            RewardKind::Dense => "pointmaze-dense",
        };
        Self {
            spec: EnvSpec {
                name: name.into(),
                state_dim: 4,
                action_dim: 2,
                max_episode_steps: MAX_EPISODE_STEPS,
                reward_kind,
            },
            walls: vec![Wall {
                min: [0.0, 2.25],
                max: [3.5, 2.75],
            }],
            state: [0.0; 4],
            t: 0,
            over: false,
        }
    }

    pub fn walls(&self) -> &[Wall] {
        &self.walls
    }

    pub fn set_state(&mut self, state: [f64; 4]) {
        self.state = state;
        self.t = 0;
        self.over = false;
    }

    pub fn goal_distance(p: &[f64]) -> f64 {
        ((p[0] - GOAL[0]).powi(2) + (p[1] - GOAL[1]).powi(2)).sqrt()
    }

    /// Moves along `axis` from `pos` by `delta`, stopping at the first wall
    /// face crossed. Returns the new coordinate and whether a wall was hit.
    fn sweep(&self, pos: [f64; 2], axis: usize, delta: f64) -> (f64, bool) {
        let other = 1 - axis;
        let from = pos[axis];
        let mut to = from + delta;
        let mut hit = false;
        for w in &self.walls {
            if !(pos[other] > w.min[other] && pos[other] < w.max[other]) {
                continue;
            }
            if delta > 0.0 && from <= w.min[axis] && to > w.min[axis] {
                to = w.min[axis];
                hit = true;
            } else if delta < 0.0 && from >= w.max[axis] && to < w.max[axis] {
                to = w.max[axis];
                hit = true;
            }
        }
        if to < 0.0 {
            (0.0, true)
        } else if to > SIZE {
            (SIZE, true)
        } else {
            (to, hit)
        }
    }

    /// Region-based waypoint: along the bottom corridor, up the right-hand
    /// gap, then along the top corridor to the goal.
    fn waypoint(p: &[f64]) -> [f64; 2] {
        if p[1] < 2.75 && p[0] < 3.9 {
            [4.25, 1.25]
        } else if p[1] < 3.3 {
            [4.25, 3.9]
        } else {
            GOAL
        }
    }
}

impl Environment for PointMaze {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = stream_rng(seed, stream::ENV);
        let x = rng.random_range(START_MIN[0]..START_MAX[0]);
        let y = rng.random_range(START_MIN[1]..START_MAX[1]);
        self.set_state([x, y, 0.0, 0.0]);
        self.state.to_vec()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome, EnvError> {
        if self.over {
            return Err(EnvError::EpisodeOver);
        }
        let a = clip_action(action, 2)?;
        let [x, y, vx, vy] = self.state;
        let mut v = [(1.0 - FRICTION) * vx + DT * a[0], (1.0 - FRICTION) * vy + DT * a[1]];
        let speed = (v[0] * v[0] + v[1] * v[1]).sqrt();
        if speed > V_MAX {
            v = [v[0] * V_MAX / speed, v[1] * V_MAX / speed];
        }
        let mut p = [x, y];
        let (nx, hx) = self.sweep(p, 0, DT * v[0]);
        p[0] = nx;
        if hx {
            v[0] = 0.0;
        }
        let (ny, hy) = self.sweep(p, 1, DT * v[1]);
        p[1] = ny;
        if hy {
            v[1] = 0.0;
        }
        self.state = [p[0], p[1], v[0], v[1]];
        self.t += 1;

        let reached = Self::goal_distance(&p) < GOAL_RADIUS;
        let (reward, terminal) = match self.spec.reward_kind {
            RewardKind::Sparse => (if reached { 1.0 } else { 0.0 }, reached),
            RewardKind::Dense => (-Self::goal_distance(&p), false),
        };
        let done = terminal || self.t >= self.spec.max_episode_steps;
        self.over = done;
        Ok(StepOutcome {
            state: self.state.to_vec(),
            reward,
            done,
            terminal,
            success: reached,
        })
    }

    fn state(&self) -> &[f64] {
        &self.state
    }

    /// Proportional control (gain 1) toward the current waypoint.
    fn expert_action(&self, state: &[f64]) -> Vec<f64> {
        let target = Self::waypoint(state);
        (0..2).map(|i| (target[i] - state[i]).clamp(-1.0, 1.0)).collect()
    }

    fn in_start_region(&self, state: &[f64]) -> bool {
        (0..2).all(|i| state[i] >= START_MIN[i] && state[i] < START_MAX[i]) && state[2] == 0.0 && state[3] == 0.0
    }
}
