use std::io::Write;

use rand::Rng as _;

use super::{guiding_reward, GuidedSacAgent, GuidedSacConfig, ReplayBuffer, Result, SacError, Transition, UpdateStats};
use crate::afdt::{Planner, PlannerContext};
use crate::envs::{make_env, Environment, StepOutcome};
use crate::nn::Real;
use crate::rng::{mix_seed, stream, stream_rng, Rng};

pub const CURVE_HEADER: &str = "step,episode,eval_return,success_rate,loss_qe,loss_qg,loss_pi,alpha,mean_rg";

/// One learning-curve row.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub step: usize,
    /// Training episodes finished so far.
    pub episode: usize,
    pub eval_return: f64,
    pub success_rate: f64,
    pub loss_qe: f64,
    pub loss_qg: f64,
    pub loss_pi: f64,
    pub alpha: f64,
    /// Mean guiding reward of the transitions collected since the last row.
    pub mean_rg: f64,
}

pub fn write_curve_csv<W: Write>(rows: &[EvalRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{CURVE_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.step, r.episode, r.eval_return, r.success_rate, r.loss_qe, r.loss_qg, r.loss_pi, r.alpha, r.mean_rg
        )?;
    }
    Ok(())
}

/// Live episode state for online collection.
pub struct Rollout {
    pub env: Box<dyn Environment>,
    pub state: Vec<f64>,
    /// Present whenever a planner is attached.
    pub ctx: Option<PlannerContext>,
    pub initial_rtg: f64,
    /// Episodes finished so far.
    pub episode: usize,
    pub episode_return: f64,
    /// Planner queries that failed and fell back to a zero guiding reward.
    pub planner_incidents: u64,
    seed: u64,
    context_len: Option<usize>,
}

impl Rollout {
    pub fn new(env: Box<dyn Environment>, planner: Option<&Planner>, initial_rtg: f64, seed: u64) -> Self {
        let mut r = Self {
            env,
            state: Vec::new(),
            ctx: None,
            initial_rtg,
            episode: 0,
            episode_return: 0.0,
            planner_incidents: 0,
            seed,
            context_len: planner.map(Planner::context_len),
        };
        r.begin_episode();
        r
    }

    fn begin_episode(&mut self) {
        self.state = self.env.reset(mix_seed(self.seed, self.episode as u64));
        self.episode_return = 0.0;
        self.ctx = self
            .context_len
            .map(|k| PlannerContext::new(k, &self.state, self.initial_rtg));
    }
}

/// Plans the next state, acts, steps the environment, scores the plan and
/// advances the planner context. The transition is appended to `buffer` and
/// also returned.
pub fn collect_step<F: Real>(
    agent: &mut GuidedSacAgent<F>,
    rollout: &mut Rollout,
    planner: Option<&Planner>,
    buffer: &mut ReplayBuffer,
    random_action: bool,
    explore: &mut Rng,
) -> Result<(Transition, StepOutcome)> {
    let planned = match (planner, rollout.ctx.as_ref()) {
        (Some(p), Some(ctx)) => match p.plan(ctx) {
            Ok(s) => Some(s),
            Err(_) => {
                rollout.planner_incidents += 1;
                None
            }
        },
        _ => None,
    };
    let action: Vec<f64> = if random_action {
        (0..agent.action_dim).map(|_| explore.random_range(-1.0..1.0)).collect()
    } else {
        agent.act(&rollout.state, Some(explore))?
    };
    let out = rollout.env.step(&action)?;
    let reward_guide = match (planned, planner) {
        (Some(p), Some(pl)) => match guiding_reward(&p, &out.state, &pl.norm().divisors()) {
            Ok(r) => r,
            Err(_) => {
                rollout.planner_incidents += 1;
                0.0
            }
        },
        _ => 0.0,
    };
    if let Some(ctx) = rollout.ctx.as_mut() {
        ctx.update(&out.state, out.reward);
    }
    let t = Transition {
        state: std::mem::replace(&mut rollout.state, out.state.clone()),
        action,
        reward_env: out.reward,
        reward_guide,
        next_state: out.state.clone(),
        done: out.terminal,
    };
    rollout.episode_return += out.reward;
    buffer.push(t.clone());
    if out.done {
        rollout.episode += 1;
        rollout.begin_episode();
    }
    Ok((t, out))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub mean_return: f64,
    pub success_rate: f64,
    pub returns: Vec<f64>,
}

/// Runs `n_episodes` with the given action rule on fixed episode seeds
/// derived from `seed`.
pub fn evaluate_policy(
    env_name: &str,
    n_episodes: usize,
    seed: u64,
    mut act: impl FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<EvalSummary> {
    let mut env = make_env(env_name)?;
    let base = mix_seed(seed, stream::EVAL);
    let mut returns = Vec::with_capacity(n_episodes);
    let mut successes = 0usize;
    for ep in 0..n_episodes {
        let mut state = env.reset(mix_seed(base, ep as u64));
        let mut total = 0.0;
        let mut success = false;
        loop {
            let a = act(&state)?;
            let out = env.step(&a)?;
            total += out.reward;
            success |= out.success;
            state = out.state;
            if out.done {
                break;
            }
        }
        returns.push(total);
        successes += success as usize;
    }
    let n = n_episodes.max(1) as f64;
    Ok(EvalSummary {
        mean_return: returns.iter().sum::<f64>() / n,
        success_rate: successes as f64 / n,
        returns,
    })
}

pub struct TrainRun<F: Real> {
    pub agent: GuidedSacAgent<F>,
    pub rows: Vec<EvalRow>,
    pub buffer: ReplayBuffer,
    pub updates: u64,
    pub aborted_updates: u64,
    pub planner_incidents: u64,
}

/// Online training: random actions during warmup, then one collection step
/// followed by `gradient_steps` updates per environment step. A
/// deterministic evaluation row is produced every `eval_every` steps.
pub fn train(
    config: &GuidedSacConfig,
    env_name: &str,
    planner: Option<&Planner>,
    initial_rtg: f64,
    total_steps: usize,
    seed: u64,
) -> Result<TrainRun<f32>> {
    config.validate()?;
    let planner = if config.mode.uses_planner() {
        Some(planner.ok_or(SacError::MissingPlanner(config.mode))?)
    } else {
        None
    };
    let env = make_env(env_name)?;
    let spec = env.spec().clone();
    if let Some(p) = planner {
        if p.model.state_dim != spec.state_dim {
            return Err(SacError::Shape(format!(
                "planner state_dim {} but {} has {}",
                p.model.state_dim, spec.name, spec.state_dim
            )));
        }
    }
    let mut agent = GuidedSacAgent::<f32>::new(config.clone(), spec.state_dim, spec.action_dim, seed)?;
    let mut rollout = Rollout::new(env, planner, initial_rtg, mix_seed(seed, stream::ENV));
    let mut buffer = ReplayBuffer::new(config.buffer_capacity);
    let mut explore = stream_rng(seed, stream::EXPLORATION);
    let mut sampling = stream_rng(seed, stream::SAMPLING);

    let mut rows = Vec::new();
    let mut updates = 0u64;
    let mut aborted = 0u64;
    let mut acc = UpdateStats::default();
    let mut acc_n = 0usize;
    let mut rg_sum = 0.0;
    let mut rg_n = 0usize;
    for step in 1..=total_steps {
        let warm = step <= config.warmup_steps;
        let (t, _) = collect_step(&mut agent, &mut rollout, planner, &mut buffer, warm, &mut explore)?;
        rg_sum += t.reward_guide;
        rg_n += 1;
        if !warm {
            for _ in 0..config.gradient_steps {
                let batch = buffer.sample::<f32>(config.batch_size, &mut sampling);
                match agent.update(&batch) {
                    Ok(s) => {
                        updates += 1;
                        acc.loss_qe += s.loss_qe;
                        acc.loss_qg += s.loss_qg;
                        acc.loss_pi += s.loss_pi;
                        acc_n += 1;
                    }
                    Err(SacError::NonFinite(_)) | Err(SacError::Nn(_)) => aborted += 1,
                    Err(e) => return Err(e),
                }
            }
        }
        if step % config.eval_every == 0 {
            let summary = evaluate_policy(env_name, config.eval_episodes, seed, |s| agent.act(s, None))?;
            let n = acc_n.max(1) as f64;
            rows.push(EvalRow {
                step,
                episode: rollout.episode,
                eval_return: summary.mean_return,
                success_rate: summary.success_rate,
                loss_qe: acc.loss_qe / n,
                loss_qg: acc.loss_qg / n,
                loss_pi: acc.loss_pi / n,
                alpha: agent.alpha(),
                mean_rg: rg_sum / rg_n.max(1) as f64,
            });
            acc = UpdateStats::default();
            acc_n = 0;
            rg_sum = 0.0;
            rg_n = 0;
        }
    }
    Ok(TrainRun {
        agent,
        rows,
        buffer,
        updates,
        aborted_updates: aborted,
        planner_incidents: rollout.planner_incidents,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::afdt::{AfdtConfig, AfdtModel};
    use crate::dataset::NormStats;
    use crate::guided_sac::SacMode;
    use crate::nn::TransformerSpec;

    fn config(mode: SacMode) -> GuidedSacConfig {
        GuidedSacConfig {
            mode,
            hidden_dim: 16,
            n_hidden_layers: 1,
            batch_size: 16,
            warmup_steps: 50,
            eval_every: 50,
            eval_episodes: 2,
            ..GuidedSacConfig::default()
        }
    }

    fn zero_planner(state_dim: usize) -> Planner {
        let cfg = AfdtConfig {
            context_len: 4,
            transformer: TransformerSpec {
                n_blocks: 1,
                n_heads: 1,
                d_embed: 8,
                dropout: 0.0,
                max_tokens: 8,
            },
            ..AfdtConfig::default()
        };
        Planner::new(AfdtModel::new(cfg, state_dim, NormStats::unit(state_dim), 0).unwrap())
    }

    #[test]
    fn warmup_only_run_makes_no_updates() {
        let run = train(&config(SacMode::Sac), "corridor", None, 150.0, 50, 1).unwrap();
        assert_eq!(run.updates, 0);
        assert_eq!(run.buffer.len(), 50);
    }

    #[test]
    fn sac_mode_stores_zero_guiding_reward() {
        let run = train(&config(SacMode::Sac), "pointmaze-dense", None, -50.0, 120, 2).unwrap();
        assert!(run.buffer.iter().all(|t| t.reward_guide == 0.0));
        assert_eq!(run.updates, 70);
    }

    #[test]
    fn guided_modes_require_a_planner() {
        assert!(matches!(
            train(&config(SacMode::Guided), "corridor", None, 150.0, 10, 1),
            Err(SacError::MissingPlanner(SacMode::Guided))
        ));
    }

    #[test]
    fn identical_seeds_give_identical_curves() {
        let planner = zero_planner(2);
        let csv = |seed| {
            let run = train(&config(SacMode::Guided), "corridor", Some(&planner), 150.0, 150, seed).unwrap();
            let mut b = Vec::new();
            write_curve_csv(&run.rows, &mut b).unwrap();
            String::from_utf8(b).unwrap()
        };
        let a = csv(3);
        assert_eq!(a, csv(3));
        assert_ne!(a, csv(4));
        assert_eq!(a.lines().next().unwrap(), CURVE_HEADER);
        assert_eq!(a.lines().count(), 4);
    }

    #[test]
    fn zero_planner_scores_displacement() {
        // A planner that predicts "no change" is matched exactly whenever the
        // agent stays put, and penalised by the normalised displacement
        // otherwise.
        let planner = zero_planner(2);
        let mut agent = GuidedSacAgent::<f32>::new(config(SacMode::Guided), 2, 1, 5).unwrap();
        let mut rollout = Rollout::new(make_env("corridor").unwrap(), Some(&planner), 150.0, 6);
        let mut buffer = ReplayBuffer::new(100);
        let mut rng = stream_rng(7, 0);
        for _ in 0..20 {
            let (t, _) = collect_step(&mut agent, &mut rollout, Some(&planner), &mut buffer, true, &mut rng).unwrap();
            let want = guiding_reward(&t.state, &t.next_state, &[1.0, 1.0]).unwrap();
            assert_eq!(t.reward_guide, want);
        }
    }

    #[test]
    fn context_tracks_returns_to_go() {
        let planner = zero_planner(4);
        let mut agent = GuidedSacAgent::<f32>::new(config(SacMode::Guided), 4, 2, 8).unwrap();
        let mut rollout = Rollout::new(make_env("pointmaze-dense").unwrap(), Some(&planner), -50.0, 9);
        let mut buffer = ReplayBuffer::new(1000);
        let mut rng = stream_rng(10, 0);
        let mut expected = -50.0;
        for _ in 0..299 {
            let (t, out) = collect_step(&mut agent, &mut rollout, Some(&planner), &mut buffer, false, &mut rng).unwrap();
            assert!(!out.done);
            expected -= t.reward_env;
            let ctx = rollout.ctx.as_ref().unwrap();
            assert_eq!(ctx.rtg(), expected);
            assert!(ctx.len() <= 4);
        }
        collect_step(&mut agent, &mut rollout, Some(&planner), &mut buffer, false, &mut rng).unwrap();
        assert_eq!(rollout.episode, 1);
        assert_eq!(rollout.ctx.as_ref().unwrap().rtg(), -50.0);
    }
}
