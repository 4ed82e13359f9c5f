//! Tabular dynamic programming, policy-gradient methods and imitation
//! learning, written against a small hand-rolled neural network stack.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod distributions;
pub mod envs;
pub mod experiments;
pub mod error;
pub mod mdp;
pub mod nn;
pub mod policy;
pub mod ppo;
pub mod imitation;
pub mod reinforce;
pub mod rollout;

pub use error::{Error, Result};
