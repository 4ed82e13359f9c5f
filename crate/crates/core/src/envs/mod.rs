//! Simulated environments behind a single reset/step interface.

mod cartpole;
mod gridworld;
mod navgrid;
mod tabular;

pub use cartpole::{
    cartpole_dynamics, cartpole_step, CartPole, CartPoleState, CARTPOLE_MAX_STEPS, FORCE_MAG, TAU, THETA_THRESHOLD,
    X_THRESHOLD,
};
pub use gridworld::{gridworld_to_mdp, GridAction, GridWorldSpec, Jump, WIND_POLICY};
pub use navgrid::{nav_oracle, NavAction, NavEncoding, NavGrid, NavGridEnv};
pub use tabular::{two_state_env, two_state_mdp, TabularEnv, MOVE, STAY, STATE_A, STATE_B};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl Action {
    pub fn discrete(&self) -> Option<usize> {
        match self {
            Action::Discrete(a) => Some(*a),
            Action::Continuous(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ActionSpace {
    Discrete(usize),
    /// Box `[low, high]^dim`.
    Continuous { dim: usize, low: f64, high: f64 },
}

impl ActionSpace {
    /// Number of discrete actions or continuous dimensions.
    pub fn size(&self) -> usize {
        match self {
            ActionSpace::Discrete(n) => *n,
            ActionSpace::Continuous { dim, .. } => *dim,
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, ActionSpace::Discrete(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// Agent–environment interface.
///
/// `step` after an episode has ended fails with a contract error until the
/// next `reset`. Equal seeds and action sequences give identical trajectories.
pub trait Env {
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, action: &Action) -> Result<Step>;
    fn action_space(&self) -> ActionSpace;
    fn state_dim(&self) -> usize;
}

impl<E: Env + ?Sized> Env for Box<E> {
    fn reset(&mut self, seed: u64) -> Vec<f64> {
        (**self).reset(seed)
    }

    fn step(&mut self, action: &Action) -> Result<Step> {
        (**self).step(action)
    }

    fn action_space(&self) -> ActionSpace {
        (**self).action_space()
    }

    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
}

pub(crate) fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

pub(crate) fn step_after_done() -> crate::error::Error {
    crate::error::Error::Contract("step called after the episode ended; call reset first".into())
}
