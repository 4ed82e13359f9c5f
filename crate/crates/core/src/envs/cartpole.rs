use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{step_after_done, Action, ActionSpace, Env, Step};
use crate::error::{Error, Result};

pub const GRAVITY: f64 = 9.8;
pub const MASS_CART: f64 = 1.0;
pub const MASS_POLE: f64 = 0.1;
pub const HALF_LENGTH: f64 = 0.5;
pub const FORCE_MAG: f64 = 10.0;
pub const TAU: f64 = 0.02;
pub const X_THRESHOLD: f64 = 2.4;
pub const THETA_THRESHOLD: f64 = 12.0 * 2.0 * std::f64::consts::PI / 360.0;
pub const CARTPOLE_MAX_STEPS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CartPoleState {
    pub x: f64,
    pub x_dot: f64,
    pub beta: f64,
    pub beta_dot: f64,
}

impl CartPoleState {
    pub fn to_vec(self) -> Vec<f64> {
        vec![self.x, self.x_dot, self.beta, self.beta_dot]
    }

    pub fn from_slice(s: &[f64]) -> Self {
        CartPoleState {
            x: s[0],
            x_dot: s[1],
            beta: s[2],
            beta_dot: s[3],
        }
    }

    pub fn out_of_bounds(&self) -> bool {
        self.x.abs() > X_THRESHOLD || self.beta.abs() > THETA_THRESHOLD
    }
}

/// One explicit-Euler step under horizontal `force`.
pub fn cartpole_dynamics(s: CartPoleState, force: f64) -> CartPoleState {
    let total_mass = MASS_CART + MASS_POLE;
    let polemass_length = MASS_POLE * HALF_LENGTH;
    let (sin, cos) = s.beta.sin_cos();
    let temp = (force + polemass_length * s.beta_dot * s.beta_dot * sin) / total_mass;
    let beta_acc = (GRAVITY * sin - cos * temp) / (HALF_LENGTH * (4.0 / 3.0 - MASS_POLE * cos * cos / total_mass));
    let x_acc = temp - polemass_length * beta_acc * cos / total_mass;
    CartPoleState {
        x: s.x + TAU * s.x_dot,
        x_dot: s.x_dot + TAU * x_acc,
        beta: s.beta + TAU * s.beta_dot,
        beta_dot: s.beta_dot + TAU * beta_acc,
    }
}

/// Action 0 pushes left, 1 pushes right. `done` covers the position and
/// angle limits only; the step cap belongs to [`CartPole`].
pub fn cartpole_step(s: CartPoleState, action: usize) -> Result<(CartPoleState, f64, bool)> {
    let force = match action {
        0 => -FORCE_MAG,
        1 => FORCE_MAG,
        a => return Err(Error::invalid(format!("cart-pole action {a} out of range"))),
    };
    let next = cartpole_dynamics(s, force);
    Ok((next, 1.0, next.out_of_bounds()))
}

/// Cart-pole balancing with a 500-step cap.
///
/// The continuous variant takes one value in `[−1, 1]` scaled to the force.
#[derive(Debug, Clone)]
pub struct CartPole {
    state: CartPoleState,
    steps: usize,
    done: bool,
    max_steps: usize,
    continuous: bool,
}

impl Default for CartPole {
    fn default() -> Self {
        Self::new()
    }
}

impl CartPole {
    pub fn new() -> Self {
        CartPole {
            state: CartPoleState::default(),
            steps: 0,
            done: true,
            max_steps: CARTPOLE_MAX_STEPS,
            continuous: false,
        }
    }

    pub fn continuous() -> Self {
        CartPole {
            continuous: true,
            ..Self::new()
        }
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = max_steps;
        self
    }

    pub fn state(&self) -> CartPoleState {
        self.state
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Starts an episode from an explicit state.
    pub fn reset_to(&mut self, state: CartPoleState) -> Vec<f64> {
        self.state = state;
        self.steps = 0;
        self.done = false;
        state.to_vec()
    }
}

impl Env for CartPole {
    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || rng.random_range(-0.05..=0.05);
        let s = CartPoleState {
            x: draw(),
            x_dot: draw(),
            beta: draw(),
            beta_dot: draw(),
        };
        self.reset_to(s)
    }

    fn step(&mut self, action: &Action) -> Result<Step> {
        if self.done {
            return Err(step_after_done());
        }
        let next = match (action, self.continuous) {
            (Action::Discrete(a), false) => cartpole_step(self.state, *a)?.0,
            (Action::Continuous(u), true) if u.len() == 1 => {
                if !u[0].is_finite() {
                    return Err(Error::NonFinite("cart-pole force".into()));
                }
                cartpole_dynamics(self.state, FORCE_MAG * u[0].clamp(-1.0, 1.0))
            }
            _ => return Err(Error::invalid("action does not match the cart-pole action space")),
        };
        self.state = next;
        self.steps += 1;
        self.done = next.out_of_bounds() || self.steps >= self.max_steps;
        Ok(Step {
            state: next.to_vec(),
            reward: 1.0,
            done: self.done,
        })
    }

    fn action_space(&self) -> ActionSpace {
        if self.continuous {
            ActionSpace::Continuous {
                dim: 1,
                low: -1.0,
                high: 1.0,
            }
        } else {
            ActionSpace::Discrete(2)
        }
    }

    fn state_dim(&self) -> usize {
        4
    }
}
