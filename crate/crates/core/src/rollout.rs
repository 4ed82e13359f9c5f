//! Episode collection and evaluation shared by the trainers.

use rand::Rng;

use crate::envs::{Action, Env};
use crate::error::Result;
use crate::nn::RunningNormalizer;
use crate::policy::{env_action, Agent, Policy};

/// One episode. `rewards[t]` is `R_{t+1}`, the reward for `actions[t]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeTrace {
    pub raw_states: Vec<Vec<f64>>,
    /// What the policy saw (normalized when a normalizer is in use).
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    /// Whether the environment ended the episode (as opposed to the horizon).
    pub terminated: bool,
}

impl EpisodeTrace {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// Runs `policy` from `initial_state` for at most `horizon` steps.
///
/// With a normalizer, each observed state is folded into its statistics
/// before being standardized.
pub fn rollout<E: Env + ?Sized, P: Policy, R: Rng + ?Sized>(
    env: &mut E,
    initial_state: Vec<f64>,
    policy: &P,
    horizon: usize,
    rng: &mut R,
    mut normalizer: Option<&mut RunningNormalizer>,
) -> Result<EpisodeTrace> {
    let mut trace = EpisodeTrace::default();
    let mut state = initial_state;
    for _ in 0..horizon {
        let input = match normalizer.as_deref_mut() {
            Some(n) => n.normalize(&state, true)?,
            None => state.clone(),
        };
        let action = policy.sample(&input, rng)?;
        let step = env.step(&env_action(&action))?;
        trace.raw_states.push(std::mem::replace(&mut state, step.state));
        trace.states.push(input);
        trace.actions.push(action);
        trace.rewards.push(step.reward);
        if step.done {
            trace.terminated = true;
            break;
        }
    }
    Ok(trace)
}

/// `G_t = R_{t+1} + γ G_{t+1}` for every step, by one backward pass.
pub fn returns_along_trace(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut g = 0.0;
    for t in (0..rewards.len()).rev() {
        g = rewards[t] + gamma * g;
        out[t] = g;
    }
    out
}

/// Undiscounted returns of greedy episodes; episode `i` resets with
/// `seed + i`.
pub fn evaluate_greedy<E: Env + ?Sized, P: Policy>(
    env: &mut E,
    agent: &Agent<P>,
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    (0..episodes)
        .map(|i| {
            let mut state = env.reset(seed.wrapping_add(i as u64));
            let mut total = 0.0;
            for _ in 0..horizon {
                let action = agent.greedy(&state)?;
                let step = env.step(&env_action(&action))?;
                total += step.reward;
                state = step.state;
                if step.done {
                    break;
                }
            }
            Ok(total)
        })
        .collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Stop after `streak` consecutive episodes with reward at least `reward`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStop {
    pub streak: usize,
    pub reward: f64,
}

impl EarlyStop {
    pub fn cartpole() -> Self {
        EarlyStop {
            streak: 5,
            reward: 500.0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub(crate) struct StreakCounter {
    run: usize,
}

impl StreakCounter {
    pub(crate) fn push(&mut self, stop: Option<EarlyStop>, reward: f64) -> bool {
        let Some(stop) = stop else { return false };
        if reward >= stop.reward {
            self.run += 1;
        } else {
            self.run = 0;
        }
        self.run >= stop.streak
    }
}
