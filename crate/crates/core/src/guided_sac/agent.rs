use ndarray::{Array2, Axis};
use rand_distr::{Distribution, StandardNormal};

use super::{Batch, GuidedSacConfig, Result, SacError, SacMode};
use crate::nn::{Mlp, MlpSpec, Optimizer, ParamId, ParamStore, Real, Tape, Var};
use crate::rng::{stream, stream_rng, Rng};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
/// Acting clips to this magnitude so saturated `tanh` never reaches the bound.
pub const ACTION_LIMIT: f64 = 1.0 - 1e-6;

/// Losses and temperature from one round of updates.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateStats {
    pub loss_qe: f64,
    pub loss_qg: f64,
    pub loss_pi: f64,
    pub loss_alpha: f64,
    pub alpha: f64,
}

#[derive(Clone, Debug)]
pub struct GuidedSacAgent<F: Real> {
    pub config: GuidedSacConfig,
    pub state_dim: usize,
    pub action_dim: usize,
    pub policy_net: Mlp,
    pub policy: ParamStore<F>,
    pub qe1: Mlp,
    pub qe2: Mlp,
    /// Both environment critics.
    pub critic: ParamStore<F>,
    pub critic_target: ParamStore<F>,
    pub qg: Option<Mlp>,
    pub guide: ParamStore<F>,
    log_alpha_id: ParamId,
    pub log_alpha: ParamStore<F>,
    policy_opt: Optimizer<F>,
    critic_opt: Optimizer<F>,
    guide_opt: Optimizer<F>,
    alpha_opt: Optimizer<F>,
    /// Noise source for reparameterised samples inside updates.
    pub rng: Rng,
    /// Non-finite policy outputs replaced during acting.
    pub incidents: u64,
}

fn spec(config: &GuidedSacConfig, input: usize, output: usize) -> MlpSpec {
    MlpSpec::new(input, output).with_hidden(config.hidden_dim, config.n_hidden_layers)
}

impl<F: Real> GuidedSacAgent<F> {
    /// Each network draws its initial weights from its own stream, so modes
    /// that differ only by the guiding critic share identical policies and
    /// environment critics.
    pub fn new(config: GuidedSacConfig, state_dim: usize, action_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if state_dim == 0 || action_dim == 0 {
            return Err(SacError::Shape(format!("state_dim {state_dim}, action_dim {action_dim}")));
        }
        let mut policy = ParamStore::new();
        let policy_net = Mlp::new(
            &mut policy,
            "policy",
            spec(&config, state_dim, 2 * action_dim),
            &mut stream_rng(seed, stream::POLICY_INIT),
        )?;
        let mut critic = ParamStore::new();
        let mut crng = stream_rng(seed, stream::CRITIC_INIT);
        let qe1 = Mlp::new(&mut critic, "qe1", spec(&config, state_dim + action_dim, 1), &mut crng)?;
        let qe2 = Mlp::new(&mut critic, "qe2", spec(&config, state_dim + action_dim, 1), &mut crng)?;
        let critic_target = critic.clone();
        let mut guide = ParamStore::new();
        let qg = if config.mode.has_guide_critic() {
            Some(Mlp::new(
                &mut guide,
                "qg",
                spec(&config, state_dim + action_dim, 1),
                &mut stream_rng(seed, stream::GUIDE_INIT),
            )?)
        } else {
            None
        };
        let mut log_alpha = ParamStore::new();
        let log_alpha_id = log_alpha.add("log_alpha", Array2::from_elem((1, 1), F::of(config.initial_alpha.ln())));
        let lr = config.learning_rate;
        Ok(Self {
            state_dim,
            action_dim,
            policy_net,
            policy,
            qe1,
            qe2,
            critic,
            critic_target,
            qg,
            guide,
            log_alpha_id,
            log_alpha,
            policy_opt: Optimizer::adam(lr),
            critic_opt: Optimizer::adam(lr),
            guide_opt: Optimizer::adam(lr),
            alpha_opt: Optimizer::adam(lr),
            rng: stream_rng(seed, stream::AGENT),
            incidents: 0,
            config,
        })
    }

    pub fn mode(&self) -> SacMode {
        self.config.mode
    }

    pub fn target_entropy(&self) -> f64 {
        self.config.target_entropy.unwrap_or(-(self.action_dim as f64))
    }

    pub fn alpha(&self) -> f64 {
        match self.config.fixed_alpha {
            Some(a) => a,
            None => self.log_alpha.value(self.log_alpha_id)[[0, 0]].f64().exp(),
        }
    }

    pub fn standard_noise(&mut self, rows: usize) -> Array2<F> {
        let rng = &mut self.rng;
        Array2::from_shape_simple_fn((rows, self.action_dim), || F::of(StandardNormal.sample(rng)))
    }

    /// Squashed-Gaussian sample `tanh(mean + std * noise)` and its
    /// log-density, both as functions of the policy parameters in `store`.
    pub fn policy_sample(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        states: Var,
        noise: &Array2<F>,
    ) -> Result<(Var, Var)> {
        let ad = self.action_dim;
        let out = self.policy_net.forward(tape, store, states)?;
        let mean = tape.slice_cols(out, 0, ad);
        let log_std = tape.slice_cols(out, ad, 2 * ad);
        let log_std = tape.clamp(log_std, F::of(LOG_STD_MIN), F::of(LOG_STD_MAX));
        let std = tape.exp(log_std);
        let eps = tape.constant(noise.clone());
        let spread = tape.mul(std, eps);
        let u = tape.add(mean, spread);
        let action = tape.tanh(u);

        let gauss = noise.mapv(|e| F::of(-0.5) * e * e - F::of(HALF_LN_2PI));
        let gauss = gauss.sum_axis(Axis(1)).insert_axis(Axis(1));
        let gauss = tape.constant(gauss);
        let ls_sum = tape.row_sum(log_std);
        // log(1 - tanh(u)^2) = 2 (ln 2 - u - softplus(-2u))
        let neg2u = tape.scale(u, F::of(-2.0));
        let sp = tape.softplus(neg2u);
        let t = tape.add(u, sp);
        let t = tape.scale(t, F::of(-2.0));
        let t = tape.offset(t, F::of(2.0 * std::f64::consts::LN_2));
        let jac = tape.row_sum(t);
        let lp = tape.sub(gauss, ls_sum);
        let log_prob = tape.sub(lp, jac);
        Ok((action, log_prob))
    }

    fn q_value(&self, tape: &mut Tape<F>, store: &ParamStore<F>, net: &Mlp, states: Var, actions: Var) -> Result<Var> {
        let sa = tape.concat_cols(&[states, actions]);
        Ok(net.forward(tape, store, sa)?)
    }

    fn min_q(&self, tape: &mut Tape<F>, store: &ParamStore<F>, states: Var, actions: Var) -> Result<Var> {
        let q1 = self.q_value(tape, store, &self.qe1, states, actions)?;
        let q2 = self.q_value(tape, store, &self.qe2, states, actions)?;
        Ok(tape.minimum(q1, q2))
    }

    /// Reward seen by the environment critics.
    fn critic_reward(&self, batch: &Batch<F>) -> Array2<F> {
        if self.mode() == SacMode::RewardMix {
            &batch.reward_env + &batch.reward_guide.mapv(|r| r * F::of(self.config.beta))
        } else {
            batch.reward_env.clone()
        }
    }

    /// Bootstrapped target for the environment critics, with `a' ~ pi(s')`
    /// drawn through `noise_next`.
    pub fn env_target(&self, batch: &Batch<F>, noise_next: &Array2<F>) -> Result<Array2<F>> {
        let mut tape = Tape::new();
        tape.freeze(&self.policy);
        tape.freeze(&self.critic_target);
        let next = tape.constant(batch.next_states.clone());
        let (a_next, lp_next) = self.policy_sample(&mut tape, &self.policy, next, noise_next)?;
        let q_next = self.min_q(&mut tape, &self.critic_target, next, a_next)?;
        let alpha = F::of(self.alpha());
        let gamma = F::of(self.config.gamma);
        let soft = tape.value(q_next) - &tape.value(lp_next).mapv(|l| alpha * l);
        let not_done = batch.done.mapv(|d| F::one() - d);
        let y = self.critic_reward(batch) + &(soft * &not_done).mapv(|v| gamma * v);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(SacError::NonFinite("critic target"));
        }
        Ok(y)
    }

    /// `0.5 * (mse(Q1, y) + mse(Q2, y))` with critic parameters from `store`.
    pub fn critic_env_loss(&self, tape: &mut Tape<F>, store: &ParamStore<F>, batch: &Batch<F>, y: &Array2<F>) -> Result<Var> {
        let s = tape.constant(batch.states.clone());
        let a = tape.constant(batch.actions.clone());
        let y = tape.constant(y.clone());
        let q1 = self.q_value(tape, store, &self.qe1, s, a)?;
        let q2 = self.q_value(tape, store, &self.qe2, s, a)?;
        let d1 = tape.sub(q1, y);
        let d2 = tape.sub(q2, y);
        let e1 = tape.square(d1);
        let e2 = tape.square(d2);
        let m1 = tape.mean(e1);
        let m2 = tape.mean(e2);
        let total = tape.add(m1, m2);
        Ok(tape.scale(total, F::of(0.5)))
    }

    /// Regression of the guiding critic onto the stored guiding reward. The
    /// target does not involve the next state, termination or the policy.
    pub fn critic_guide_loss(&self, tape: &mut Tape<F>, store: &ParamStore<F>, batch: &Batch<F>) -> Result<Var> {
        let net = self.qg.as_ref().ok_or(SacError::MissingPlanner(self.mode()))?;
        let s = tape.constant(batch.states.clone());
        let a = tape.constant(batch.actions.clone());
        let target = tape.constant(batch.reward_guide.clone());
        let q = self.q_value(tape, store, net, s, a)?;
        let d = tape.sub(q, target);
        let e = tape.square(d);
        Ok(tape.mean(e))
    }

    /// `mean(alpha * log pi(a|s) - (min(Qe1, Qe2) + beta * Qg))` with
    /// reparameterised `a`; critics are held fixed. Returns the loss and the
    /// per-row log-probabilities.
    pub fn actor_loss(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        batch: &Batch<F>,
        noise: &Array2<F>,
    ) -> Result<(Var, Var)> {
        tape.freeze(&self.critic);
        tape.freeze(&self.guide);
        let s = tape.constant(batch.states.clone());
        let (a, log_prob) = self.policy_sample(tape, store, s, noise)?;
        let mut q = self.min_q(tape, &self.critic, s, a)?;
        if let Some(net) = &self.qg {
            let g = self.q_value(tape, &self.guide, net, s, a)?;
            let g = tape.scale(g, F::of(self.config.beta));
            q = tape.add(q, g);
        }
        let ent = tape.scale(log_prob, F::of(self.alpha()));
        let per = tape.sub(ent, q);
        Ok((tape.mean(per), log_prob))
    }

    pub fn update_critic_env(&mut self, batch: &Batch<F>, noise_next: &Array2<F>) -> Result<f64> {
        let y = self.env_target(batch, noise_next)?;
        let mut tape = Tape::new();
        let loss = self.critic_env_loss(&mut tape, &self.critic, batch, &y)?;
        let value = tape.scalar(loss).f64();
        let grads = tape.backward(loss)?;
        self.critic.accumulate(&tape, &grads);
        self.critic_opt.step(&mut self.critic);
        self.critic_target.polyak_from(&self.critic, self.config.tau);
        Ok(value)
    }

    /// `None` when the mode has no guiding critic.
    pub fn update_critic_guide(&mut self, batch: &Batch<F>) -> Result<Option<f64>> {
        if self.qg.is_none() {
            return Ok(None);
        }
        let mut tape = Tape::new();
        let loss = self.critic_guide_loss(&mut tape, &self.guide, batch)?;
        let value = tape.scalar(loss).f64();
        let grads = tape.backward(loss)?;
        self.guide.accumulate(&tape, &grads);
        self.guide_opt.step(&mut self.guide);
        Ok(Some(value))
    }

    /// Policy step, then a temperature step towards the target entropy.
    pub fn update_actor_and_alpha(&mut self, batch: &Batch<F>, noise: &Array2<F>) -> Result<(f64, f64)> {
        let mut tape = Tape::new();
        let (loss, log_prob) = self.actor_loss(&mut tape, &self.policy, batch, noise)?;
        let value = tape.scalar(loss).f64();
        let grads = tape.backward(loss)?;
        self.policy.accumulate(&tape, &grads);
        self.policy_opt.step(&mut self.policy);

        if self.config.fixed_alpha.is_some() {
            return Ok((value, 0.0));
        }
        let h = self.target_entropy();
        let lp = tape.value(log_prob);
        let c = lp.iter().map(|l| l.f64() + h).sum::<f64>() / lp.len() as f64;
        let mut at = Tape::new();
        let la = at.param(&self.log_alpha, self.log_alpha_id);
        let alpha_loss = at.scale(la, F::of(-c));
        let alpha_value = at.scalar(alpha_loss).f64();
        let grads = at.backward(alpha_loss)?;
        self.log_alpha.accumulate(&at, &grads);
        self.alpha_opt.step(&mut self.log_alpha);
        Ok((value, alpha_value))
    }

    /// One gradient step for every component, in collection order: the
    /// environment critics, the guiding critic, then policy and temperature.
    pub fn update(&mut self, batch: &Batch<F>) -> Result<UpdateStats> {
        let noise_next = self.standard_noise(batch.len());
        let noise = self.standard_noise(batch.len());
        let loss_qe = self.update_critic_env(batch, &noise_next)?;
        let loss_qg = self.update_critic_guide(batch)?.unwrap_or(0.0);
        let (loss_pi, loss_alpha) = self.update_actor_and_alpha(batch, &noise)?;
        Ok(UpdateStats {
            loss_qe,
            loss_qg,
            loss_pi,
            loss_alpha,
            alpha: self.alpha(),
        })
    }

    /// Action for one state. `explore` supplies sampling noise; without it
    /// the action is `tanh(mean)`.
    pub fn act(&mut self, state: &[f64], explore: Option<&mut Rng>) -> Result<Vec<f64>> {
        let x: Vec<F> = state.iter().map(|&v| F::of(v)).collect();
        let out = self.policy_net.eval(&self.policy, &x)?;
        let ad = self.action_dim;
        let mut bad = false;
        let mut clean = |v: F, fallback: f64| {
            let v = v.f64();
            if v.is_finite() {
                v
            } else {
                bad = true;
                fallback
            }
        };
        let mean: Vec<f64> = out[..ad].iter().map(|&v| clean(v, 0.0)).collect();
        let log_std: Vec<f64> = out[ad..].iter().map(|&v| clean(v, LOG_STD_MIN).clamp(LOG_STD_MIN, LOG_STD_MAX)).collect();
        if bad {
            self.incidents += 1;
        }
        let a: Vec<f64> = match explore {
            None => mean.iter().map(|m| m.tanh()).collect(),
            Some(rng) => mean
                .iter()
                .zip(&log_std)
                .map(|(m, ls)| {
                    let e: f64 = StandardNormal.sample(rng);
                    (m + ls.exp() * e).tanh()
                })
                .collect(),
        };
        Ok(a.into_iter().map(|v| v.clamp(-ACTION_LIMIT, ACTION_LIMIT)).collect())
    }
}

/// Log-density of the squashed Gaussian at `action` for a 1-D policy with
/// the given mean and log-std.
#[cfg(test)]
fn squashed_log_density(action: f64, mean: f64, log_std: f64) -> f64 {
    let u = action.atanh();
    let z = (u - mean) / log_std.exp();
    -0.5 * z * z - HALF_LN_2PI - log_std - (1.0 - action * action).ln()
}
