use crate::envs::{Action, ActionSpace, CartPole, CartPoleState, Env, NavGridEnv, Step, TabularEnv};
use crate::error::{Error, Result};

/// Any environment a config can name.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum EnvInstance {
    CartPole(CartPole),
    Tabular(TabularEnv),
    NavGrid(NavGridEnv),
}

impl EnvInstance {
    /// Puts the environment in the state a recorded trajectory starts from.
    /// Tabular environments cannot be placed and return an error.
    pub fn reset_to_state(&mut self, state: &[f64]) -> Result<Vec<f64>> {
        match self {
            EnvInstance::CartPole(env) => {
                if state.len() != 4 {
                    return Err(Error::DimensionMismatch {
                        expected: 4,
                        got: state.len(),
                    });
                }
                Ok(env.reset_to(CartPoleState::from_slice(state)))
            }
            EnvInstance::NavGrid(env) => {
                let cell = env.decode(state)?;
                env.reset_to(cell)
            }
            EnvInstance::Tabular(_) => Err(Error::invalid("tabular environments cannot be reset to a given state")),
        }
    }

    pub fn as_navgrid(&self) -> Option<&NavGridEnv> {
        match self {
            EnvInstance::NavGrid(env) => Some(env),
            _ => None,
        }
    }
}

impl Env for EnvInstance {
    fn reset(&mut self, seed: u64) -> Vec<f64> {
        match self {
            EnvInstance::CartPole(e) => e.reset(seed),
            EnvInstance::Tabular(e) => e.reset(seed),
            EnvInstance::NavGrid(e) => e.reset(seed),
        }
    }

    fn step(&mut self, action: &Action) -> Result<Step> {
        match self {
            EnvInstance::CartPole(e) => e.step(action),
            EnvInstance::Tabular(e) => e.step(action),
            EnvInstance::NavGrid(e) => e.step(action),
        }
    }

    fn action_space(&self) -> ActionSpace {
        match self {
            EnvInstance::CartPole(e) => e.action_space(),
            EnvInstance::Tabular(e) => e.action_space(),
            EnvInstance::NavGrid(e) => e.action_space(),
        }
    }

    fn state_dim(&self) -> usize {
        match self {
            EnvInstance::CartPole(e) => e.state_dim(),
            EnvInstance::Tabular(e) => e.state_dim(),
            EnvInstance::NavGrid(e) => e.state_dim(),
        }
    }
}
