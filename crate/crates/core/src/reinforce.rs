//! Monte-Carlo policy gradient with per-step updates, with and without a
//! learned state-value baseline.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::envs::Env;
use crate::error::{Error, Result};
use crate::nn::{ExponentialDecay, Optimizer, OptimizerKind, RunningNormalizer};
use crate::policy::{Agent, MlpValueFunction, Policy};
use crate::rollout::{returns_along_trace, rollout, EarlyStop, EpisodeTrace, StreakCounter};

#[derive(Debug, Clone, PartialEq)]
pub struct ReinforceConfig {
    pub alpha0: f64,
    pub tau: f64,
    pub delta_t: u64,
    pub staircase: bool,
    pub decay_clock: DecayClock,
    pub gamma: f64,
    pub horizon: usize,
    pub episodes: usize,
    /// Multiply each update by `γ^t`.
    pub discount_updates: bool,
    pub optimizer: OptimizerKind,
    /// L2 strength `λ` on the policy (gradient `2λθ`).
    pub weight_decay: f64,
    pub normalize_states: bool,
    pub early_stop: Option<EarlyStop>,
}

impl Default for ReinforceConfig {
    fn default() -> Self {
        ReinforceConfig {
            alpha0: 1e-3,
            tau: 1.0,
            delta_t: 100,
            staircase: false,
            decay_clock: DecayClock::Update,
            gamma: 0.99,
            horizon: 500,
            episodes: 1000,
            discount_updates: true,
            optimizer: OptimizerKind::Sgd,
            weight_decay: 0.0,
            normalize_states: false,
            early_stop: None,
        }
    }
}

impl ReinforceConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.alpha0 > 0.0 && self.alpha0.is_finite()) {
            errs.push(format!("alpha0 must be positive, got {}", self.alpha0));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            errs.push(format!("tau must be in (0, 1], got {}", self.tau));
        }
        if self.delta_t == 0 {
            errs.push("delta_t must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            errs.push(format!("gamma must be in [0, 1], got {}", self.gamma));
        }
        if self.horizon == 0 {
            errs.push("horizon must be positive".into());
        }
        if !(self.weight_decay >= 0.0) {
            errs.push("weight_decay must be non-negative".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }

    fn schedule(&self, alpha0: f64, tau: f64) -> ExponentialDecay {
        ExponentialDecay {
            alpha0,
            tau,
            delta_t: self.delta_t,
            staircase: self.staircase,
        }
    }
}

/// What the exponent `n` of the step-size decay counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DecayClock {
    /// Parameter updates across all episodes.
    #[default]
    Update,
    /// Completed episodes.
    Episode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    pub policy: ReinforceConfig,
    pub alpha_w0: f64,
    pub tau_w: f64,
    /// L2 strength on the value network.
    pub value_weight_decay: f64,
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        if !(self.alpha_w0 > 0.0) || !(self.tau_w > 0.0 && self.tau_w <= 1.0) {
            return Err(Error::Validation(vec![format!(
                "value learning rate {} / decay {} out of range",
                self.alpha_w0, self.tau_w
            )]));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub episode: usize,
    pub reward: f64,
    /// Policy step size at the episode's last update.
    pub alpha: f64,
    pub solved: bool,
}

pub fn write_episode_csv<W: Write>(mut w: W, log: &[EpisodeLog]) -> std::io::Result<()> {
    writeln!(w, "episode,reward,alpha,solved")?;
    for row in log {
        writeln!(w, "{},{},{},{}", row.episode, row.reward, row.alpha, u8::from(row.solved))?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ReinforceOutcome<P> {
    pub agent: Agent<P>,
    pub value_fn: Option<MlpValueFunction>,
    pub log: Vec<EpisodeLog>,
    pub updates: u64,
    /// Episode count at which the early-stop streak completed.
    pub solved_at: Option<usize>,
}

fn non_finite(what: &str, episode: usize, t: usize) -> Error {
    Error::NonFinite(format!("{what} gradient at episode {episode}, step {t}"))
}

fn check_finite(grad: &[f64], what: &str, episode: usize, t: usize) -> Result<()> {
    if grad.iter().all(|g| g.is_finite()) {
        Ok(())
    } else {
        Err(non_finite(what, episode, t))
    }
}

/// Plain REINFORCE: `θ ← θ + α γ^t G_t ∇ln π(A_t|S_t, θ)` after every step,
/// with `α = α_0 τ^{n/δt}` and `n` counting updates across episodes.
pub fn reinforce_train<E: Env + ?Sized, P: Policy>(
    env: &mut E,
    policy: P,
    config: &ReinforceConfig,
    seed: u64,
) -> Result<ReinforceOutcome<P>> {
    train(env, policy, None, config, None, seed)
}

/// REINFORCE with `δ = G_t − v̂(S_t, w)` replacing `G_t`; `w` follows
/// `w ← w + α^w δ ∇v̂(S_t, w)`.
pub fn reinforce_baseline_train<E: Env + ?Sized, P: Policy>(
    env: &mut E,
    policy: P,
    value_fn: MlpValueFunction,
    config: &BaselineConfig,
    seed: u64,
) -> Result<ReinforceOutcome<P>> {
    config.validate()?;
    train(env, policy, Some(value_fn), &config.policy, Some(config), seed)
}

fn train<E: Env + ?Sized, P: Policy>(
    env: &mut E,
    mut policy: P,
    mut value_fn: Option<MlpValueFunction>,
    config: &ReinforceConfig,
    baseline: Option<&BaselineConfig>,
    seed: u64,
) -> Result<ReinforceOutcome<P>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normalizer = config.normalize_states.then(|| RunningNormalizer::new(env.state_dim()));
    let theta_schedule = config.schedule(config.alpha0, config.tau);
    let w_schedule = baseline.map(|b| config.schedule(b.alpha_w0, b.tau_w));
    let mut theta_opt = Optimizer::new(config.optimizer, policy.num_params(), config.weight_decay);
    let mut w_opt = value_fn
        .as_ref()
        .map(|v| Optimizer::new(config.optimizer, v.num_params(), baseline.map_or(0.0, |b| b.value_weight_decay)));
    let mut grad = vec![0.0; policy.num_params()];
    let mut w_grad = vec![0.0; value_fn.as_ref().map_or(0, |v| v.num_params())];

    let mut n: u64 = 0;
    let mut log = Vec::new();
    let mut streak = StreakCounter::default();
    let mut solved_at = None;
    for episode in 0..config.episodes {
        let s0 = env.reset(rng.random());
        let trace: EpisodeTrace = rollout(env, s0, &policy, config.horizon, &mut rng, normalizer.as_mut())?;
        let returns = returns_along_trace(&trace.rewards, config.gamma);
        let clock = |n: u64| match config.decay_clock {
            DecayClock::Update => n,
            DecayClock::Episode => episode as u64,
        };
        let mut alpha = theta_schedule.rate(clock(n));
        let mut discount = 1.0;
        for t in 0..trace.len() {
            n += 1;
            alpha = theta_schedule.rate(clock(n));
            let state = &trace.states[t];
            let mut delta = returns[t];
            if let (Some(v), Some(opt), Some(sched)) = (value_fn.as_mut(), w_opt.as_mut(), w_schedule) {
                let (value, cache) = v.forward(state)?;
                delta -= value;
                w_grad.fill(0.0);
                // descent on ½(G − v̂)²
                v.backward_into(&cache, -delta, &mut w_grad)?;
                check_finite(&w_grad, "value", episode, t)?;
                opt.step(v.params_mut(), &w_grad, sched.rate(clock(n)))?;
            }
            let coeff = if config.discount_updates { discount * delta } else { delta };
            discount *= config.gamma;
            grad.fill(0.0);
            policy.grad_log_prob_into(state, &trace.actions[t], -coeff, &mut grad)?;
            check_finite(&grad, "policy", episode, t)?;
            theta_opt.step(policy.params_mut(), &grad, alpha)?;
        }
        let reward = trace.total_reward();
        let solved = streak.push(config.early_stop, reward);
        log.push(EpisodeLog {
            episode,
            reward,
            alpha,
            solved,
        });
        if solved {
            solved_at = Some(episode + 1);
            break;
        }
    }
    Ok(ReinforceOutcome {
        agent: Agent::new(policy, normalizer),
        value_fn,
        log,
        updates: n,
        solved_at,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{two_state_mdp, Action, TabularEnv, MOVE, STATE_A, STAY};
    use crate::mdp::TabularMdp;
    use crate::policy::LinearSoftmaxPolicy;

    #[test]
    fn learns_two_state_behaviour() {
        let mut env = TabularEnv::new(two_state_mdp(0.9).unwrap(), Some(STATE_A), 30).unwrap();
        let config = ReinforceConfig {
            alpha0: 0.05,
            gamma: 0.9,
            horizon: 30,
            episodes: 400,
            ..Default::default()
        };
        let out = reinforce_train(&mut env, LinearSoftmaxPolicy::zeros(2, 2), &config, 1).unwrap();
        let p = &out.agent.policy;
        assert_eq!(p.greedy(&[1.0, 0.0]).unwrap(), Action::Discrete(MOVE));
        assert_eq!(p.greedy(&[0.0, 1.0]).unwrap(), Action::Discrete(STAY));
    }

    #[test]
    fn zero_reward_leaves_parameters_unchanged() {
        let mdp = TabularMdp::from_records(2, 2, 0.9, (0..2).flat_map(|s| (0..2).map(move |a| (s, a, 1 - s, 0.0, 1.0))), &[])
            .unwrap();
        let mut env = TabularEnv::new(mdp, Some(0), 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let start = LinearSoftmaxPolicy::random(2, 2, 0.5, &mut rng);
        let out = reinforce_train(&mut env, start.clone(), &ReinforceConfig::default(), 3).unwrap();
        assert_eq!(out.agent.policy, start);
        assert_eq!(out.updates, 10 * 1000);
    }

    #[test]
    fn decay_uses_global_update_counter() {
        let mut env = TabularEnv::new(two_state_mdp(0.9).unwrap(), Some(STATE_A), 7).unwrap();
        let config = ReinforceConfig {
            alpha0: 0.01,
            tau: 0.5,
            delta_t: 7,
            horizon: 7,
            episodes: 3,
            ..Default::default()
        };
        let out = reinforce_train(&mut env, LinearSoftmaxPolicy::zeros(2, 2), &config, 0).unwrap();
        assert_eq!(out.updates, 21);
        assert!((out.log[2].alpha - 0.01 * 0.5f64.powi(3)).abs() < 1e-15);
    }
}
