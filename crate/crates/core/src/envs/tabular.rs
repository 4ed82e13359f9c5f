use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{one_hot, step_after_done, Action, ActionSpace, Env, Step};
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;

pub const STATE_A: usize = 0;
pub const STATE_B: usize = 1;
pub const MOVE: usize = 0;
pub const STAY: usize = 1;

/// Two locations: A is easy to leave, B hard to leave and the only source of
/// reward (+1 for staying there).
pub fn two_state_mdp(gamma: f64) -> Result<TabularMdp> {
    let records = [
        (STATE_A, MOVE, STATE_B, 0.0, 0.8),
        (STATE_A, MOVE, STATE_A, 0.0, 0.2),
        (STATE_A, STAY, STATE_A, 0.0, 0.9),
        (STATE_A, STAY, STATE_B, 0.0, 0.1),
        (STATE_B, MOVE, STATE_A, 0.0, 0.6),
        (STATE_B, MOVE, STATE_B, 0.0, 0.4),
        (STATE_B, STAY, STATE_B, 1.0, 1.0),
    ];
    TabularMdp::from_records(2, 2, gamma, records, &[])
}

pub fn two_state_env(gamma: f64, horizon: usize) -> Result<(TabularEnv, TabularMdp)> {
    let mdp = two_state_mdp(gamma)?;
    Ok((TabularEnv::new(mdp.clone(), Some(STATE_A), horizon)?, mdp))
}

/// Samples a [`TabularMdp`]; states are one-hot vectors.
#[derive(Debug, Clone)]
pub struct TabularEnv {
    mdp: TabularMdp,
    start: Option<usize>,
    horizon: usize,
    rng: ChaCha8Rng,
    state: usize,
    steps: usize,
    done: bool,
}

impl TabularEnv {
    /// `start = None` draws the start state uniformly. Episodes end at a
    /// terminal state or after `horizon` steps.
    pub fn new(mdp: TabularMdp, start: Option<usize>, horizon: usize) -> Result<Self> {
        if let Some(s) = start {
            if s >= mdp.num_states() {
                return Err(Error::invalid(format!("start state {s} out of range")));
            }
        }
        if horizon == 0 {
            return Err(Error::invalid("horizon must be positive"));
        }
        Ok(TabularEnv {
            mdp,
            start,
            horizon,
            rng: ChaCha8Rng::seed_from_u64(0),
            state: 0,
            steps: 0,
            done: true,
        })
    }

    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    pub fn current_state(&self) -> usize {
        self.state
    }
}

impl Env for TabularEnv {
    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.state = match self.start {
            Some(s) => s,
            None => self.rng.random_range(0..self.mdp.num_states()),
        };
        self.steps = 0;
        self.done = false;
        one_hot(self.mdp.num_states(), self.state)
    }

    fn step(&mut self, action: &Action) -> Result<Step> {
        if self.done {
            return Err(step_after_done());
        }
        let a = action
            .discrete()
            .filter(|&a| a < self.mdp.num_actions())
            .ok_or_else(|| Error::invalid("action outside the discrete action space"))?;
        let u: f64 = self.rng.random();
        let outcomes = self.mdp.outcomes(self.state, a);
        let mut acc = 0.0;
        let mut chosen = outcomes[outcomes.len() - 1];
        for o in outcomes {
            acc += o.probability;
            if u < acc {
                chosen = *o;
                break;
            }
        }
        self.state = chosen.next_state;
        self.steps += 1;
        self.done = self.mdp.is_terminal(self.state) || self.steps >= self.horizon;
        Ok(Step {
            state: one_hot(self.mdp.num_states(), self.state),
            reward: chosen.reward,
            done: self.done,
        })
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete(self.mdp.num_actions())
    }

    fn state_dim(&self) -> usize {
        self.mdp.num_states()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_state_rows() {
        let mdp = two_state_mdp(0.9).unwrap();
        let p = |s, a, t| mdp.outcomes(s, a).iter().filter(|o| o.next_state == t).map(|o| o.probability).sum::<f64>();
        assert_eq!(p(STATE_A, MOVE, STATE_B), 0.8);
        assert_eq!(p(STATE_A, MOVE, STATE_A), 0.2);
        assert_eq!(p(STATE_B, STAY, STATE_B), 1.0);
        assert_eq!(mdp.outcomes(STATE_B, STAY)[0].reward, 1.0);
        for s in 0..2 {
            for a in 0..2 {
                assert!(mdp.outcomes(s, a).iter().all(|o| o.reward == 0.0 || (s, a) == (STATE_B, STAY)));
            }
        }
    }

    #[test]
    fn empirical_transition_frequency() {
        let (mut env, _) = two_state_env(0.9, 1).unwrap();
        let n = 20_000;
        let mut to_b = 0;
        for seed in 0..n {
            env.reset(seed);
            if env.step(&Action::Discrete(MOVE)).unwrap().state[STATE_B] == 1.0 {
                to_b += 1;
            }
        }
        let freq = to_b as f64 / n as f64;
        assert!((freq - 0.8).abs() < 0.01, "{freq}");
        assert!(env.step(&Action::Discrete(MOVE)).is_err());
    }
}
