//! Multilayer perceptrons with hand-written reverse-mode gradients, plus the
//! optimizers and utilities used to train them.

pub mod checkpoint;
mod init;
mod mlp;
mod normalizer;
mod optim;
mod schedule;

pub use checkpoint::{Checkpoint, Entry};
pub use init::orthogonal_init;
pub use mlp::{sigmoid, Activation, ForwardCache, Init, Mlp, ParameterVector};
pub use normalizer::{RunningNormalizer, STD_FLOOR};
pub use optim::{
    adam_step, add_weight_decay, sgd_step_with_weight_decay, AdamState, Optimizer, OptimizerKind, ADAM_BETA1,
    ADAM_BETA2, ADAM_EPSILON,
};
pub use schedule::{lr_exponential_decay, lr_staircase_decay, ExponentialDecay};
