//! Human-in-the-loop recording sessions, independent of any transport.
//!
//! A demonstrate session executes every submitted action and records it. A
//! correction session shows the learner's greedy proposal; the submitted
//! action is always stored as the label, while the executed action follows
//! the DAgger mixture (the human's with probability `beta`, the learner's
//! otherwise).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::envs::{Action, ActionSpace, Env};
use crate::error::{Error, Result};
use crate::imitation::{expert_turn, DemonstrationDataset, Trajectory};
use crate::policy::Agent;

use super::agent::AnyPolicy;
use super::envs::EnvInstance;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TeleopMode {
    Demonstrate,
    Correct,
}

impl TeleopMode {
    pub fn name(self) -> &'static str {
        match self {
            TeleopMode::Demonstrate => "demonstrate",
            TeleopMode::Correct => "dagger-correct",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "demonstrate" => Some(TeleopMode::Demonstrate),
            "dagger-correct" => Some(TeleopMode::Correct),
            _ => None,
        }
    }
}

/// What the client needs to render the current step.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub episode: u64,
    pub step: usize,
    pub state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    /// Learner's greedy action, in correction mode while the episode runs.
    pub proposed: Option<Action>,
}

/// Result of one submitted action.
#[derive(Debug, Clone, PartialEq)]
pub struct Submission {
    pub label: Action,
    pub executed: Action,
    pub observation: Observation,
}

fn empty(id: u64) -> Trajectory {
    Trajectory {
        id,
        states: Vec::new(),
        actions: Vec::new(),
    }
}

#[derive(Debug, Clone)]
pub struct TeleopSession {
    id: String,
    mode: TeleopMode,
    env: EnvInstance,
    learner: Option<Agent<AnyPolicy>>,
    beta: f64,
    rng: ChaCha8Rng,
    labels: DemonstrationDataset,
    executed: DemonstrationDataset,
    current: (Trajectory, Trajectory),
    episode: u64,
    state: Vec<f64>,
    step: usize,
    reward: f64,
    done: bool,
}

impl TeleopSession {
    pub fn new(
        id: impl Into<String>,
        mut env: EnvInstance,
        mode: TeleopMode,
        learner: Option<Agent<AnyPolicy>>,
        beta: f64,
        seed: u64,
    ) -> Result<Self> {
        if mode == TeleopMode::Correct && learner.is_none() {
            return Err(Error::invalid("correction sessions need a learner policy"));
        }
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::invalid(format!("beta must be in [0, 1], got {beta}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = env.reset(rng.random());
        Ok(TeleopSession {
            id: id.into(),
            mode,
            env,
            learner,
            beta,
            rng,
            labels: DemonstrationDataset::new(),
            executed: DemonstrationDataset::new(),
            current: (empty(0), empty(0)),
            episode: 0,
            state,
            step: 0,
            reward: 0.0,
            done: false,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn mode(&self) -> TeleopMode {
        self.mode
    }

    pub fn env(&self) -> &EnvInstance {
        &self.env
    }

    pub fn action_space(&self) -> ActionSpace {
        self.env.action_space()
    }

    /// Pairs recorded so far, including the running episode.
    pub fn num_pairs(&self) -> usize {
        self.labels.num_pairs() + self.current.0.len()
    }

    fn proposal(&self) -> Result<Option<Action>> {
        match (&self.learner, self.mode, self.done) {
            (Some(agent), TeleopMode::Correct, false) => agent.greedy(&self.state).map(Some),
            _ => Ok(None),
        }
    }

    pub fn observation(&self) -> Result<Observation> {
        Ok(Observation {
            episode: self.episode,
            step: self.step,
            state: self.state.clone(),
            reward: self.reward,
            done: self.done,
            proposed: self.proposal()?,
        })
    }

    fn check_action(&self, action: &Action) -> Result<()> {
        let ok = match (self.env.action_space(), action) {
            (ActionSpace::Discrete(n), Action::Discrete(a)) => *a < n,
            (ActionSpace::Continuous { dim, .. }, Action::Continuous(v)) => v.len() == dim,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("action {action:?} is outside the action space")))
        }
    }

    /// Records `action` for the current state and advances the episode.
    pub fn submit(&mut self, action: Action) -> Result<Submission> {
        if self.done {
            return Err(Error::Contract("episode has finished; reset before acting".into()));
        }
        self.check_action(&action)?;
        let executed = match (self.mode, self.proposal()?) {
            (TeleopMode::Correct, Some(proposed)) if !expert_turn(self.beta, &mut self.rng) => proposed,
            _ => action.clone(),
        };
        let step = self.env.step(&executed)?;
        self.current.0.states.push(self.state.clone());
        self.current.0.actions.push(action.clone());
        self.current.1.states.push(self.state.clone());
        self.current.1.actions.push(executed.clone());
        self.state = step.state;
        self.reward = step.reward;
        self.done = step.done;
        self.step += 1;
        Ok(Submission {
            label: action,
            executed,
            observation: self.observation()?,
        })
    }

    fn close_episode(&mut self) -> Result<()> {
        let next = self.episode + 1;
        let (labels, executed) = std::mem::replace(&mut self.current, (empty(next), empty(next)));
        if !labels.is_empty() {
            self.labels.push(labels)?;
            self.executed.push(executed)?;
        }
        Ok(())
    }

    /// Ends the running episode (recorded pairs are kept) and starts another.
    pub fn reset(&mut self) -> Result<Observation> {
        self.close_episode()?;
        self.episode += 1;
        self.state = self.env.reset(self.rng.random());
        self.step = 0;
        self.reward = 0.0;
        self.done = false;
        self.observation()
    }

    /// The recorded labels and, separately, the actions actually executed.
    /// Replaying the executed actions reproduces the recorded states.
    pub fn finish(mut self) -> Result<(DemonstrationDataset, DemonstrationDataset)> {
        self.close_episode()?;
        Ok((self.labels, self.executed))
    }
}

/// Steps every trajectory's actions from its first state and checks each
/// following state bit for bit. Returns the number of verified transitions.
pub fn replay_dataset(env: &mut EnvInstance, dataset: &DemonstrationDataset) -> Result<usize> {
    let mut checked = 0;
    for t in dataset.trajectories() {
        let first = env.reset_to_state(&t.states[0])?;
        if first != t.states[0] {
            return Err(Error::Contract(format!("trajectory {}: start state cannot be reproduced", t.id)));
        }
        for (i, action) in t.actions.iter().enumerate().take(t.len() - 1) {
            let step = env.step(action)?;
            if step.state != t.states[i + 1] {
                return Err(Error::Contract(format!(
                    "trajectory {} diverges at step {}: expected {:?}, got {:?}",
                    t.id,
                    i + 1,
                    t.states[i + 1],
                    step.state
                )));
            }
            checked += 1;
        }
    }
    Ok(checked)
}
