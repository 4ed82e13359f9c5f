//! A policy type covering both parameterizations, and agent checkpoints.
//!
//! Checkpoint entries written for an agent:
//!
//! | name         | kind   | content                                          |
//! |--------------|--------|--------------------------------------------------|
//! | `head`       | vector | `[0, actions]` categorical, `[1, dim]` Gaussian  |
//! | `policy`     | mlp    | MLP policy network                               |
//! | `linear`     | vector | `[state_dim, actions, θ…]` for linear policies    |
//! | `normalizer` | vector | `[count, mean…, m2…]`, if states were normalized |
//! | `value`      | mlp    | value network, if one was trained                |

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Checkpoint, ForwardCache, RunningNormalizer};
use crate::policy::{Agent, HeadKind, LinearSoftmaxPolicy, MlpPolicy, MlpValueFunction, Policy};

use super::config::{NetSpec, PolicyKind};

#[derive(Debug, Clone, PartialEq)]
pub enum AnyPolicy {
    Linear(LinearSoftmaxPolicy),
    Mlp(MlpPolicy),
}

#[derive(Debug, Clone)]
pub enum AnyCache {
    Linear(Vec<f64>),
    Mlp(ForwardCache),
}

impl AnyPolicy {
    pub fn build<R: Rng + ?Sized>(spec: &NetSpec, state_dim: usize, kind: HeadKind, rng: &mut R) -> Result<Self> {
        match spec.kind {
            PolicyKind::Linear => match kind {
                HeadKind::Categorical { actions } => Ok(AnyPolicy::Linear(LinearSoftmaxPolicy::zeros(state_dim, actions))),
                HeadKind::Gaussian { .. } => Err(Error::invalid("linear policies need a discrete action space")),
            },
            PolicyKind::Mlp => {
                let mut p = MlpPolicy::new(state_dim, &spec.hidden, spec.activation, kind, spec.init, rng)?;
                if let Some(log_std) = spec.log_std {
                    p.set_log_std_bias(log_std)?;
                }
                Ok(AnyPolicy::Mlp(p))
            }
        }
    }
}

impl Policy for AnyPolicy {
    type Cache = AnyCache;

    fn head_kind(&self) -> HeadKind {
        match self {
            AnyPolicy::Linear(p) => p.head_kind(),
            AnyPolicy::Mlp(p) => p.head_kind(),
        }
    }

    fn state_dim(&self) -> usize {
        match self {
            AnyPolicy::Linear(p) => p.state_dim(),
            AnyPolicy::Mlp(p) => p.state_dim(),
        }
    }

    fn params(&self) -> &[f64] {
        match self {
            AnyPolicy::Linear(p) => p.params(),
            AnyPolicy::Mlp(p) => p.params(),
        }
    }

    fn params_mut(&mut self) -> &mut [f64] {
        match self {
            AnyPolicy::Linear(p) => p.params_mut(),
            AnyPolicy::Mlp(p) => p.params_mut(),
        }
    }

    fn forward(&self, state: &[f64]) -> Result<(Vec<f64>, AnyCache)> {
        match self {
            AnyPolicy::Linear(p) => p.forward(state).map(|(z, c)| (z, AnyCache::Linear(c))),
            AnyPolicy::Mlp(p) => p.forward(state).map(|(z, c)| (z, AnyCache::Mlp(c))),
        }
    }

    fn backward_into(&self, cache: &AnyCache, dz: &[f64], grad: &mut [f64]) -> Result<()> {
        match (self, cache) {
            (AnyPolicy::Linear(p), AnyCache::Linear(c)) => p.backward_into(c, dz, grad),
            (AnyPolicy::Mlp(p), AnyCache::Mlp(c)) => p.backward_into(c, dz, grad),
            _ => Err(Error::Contract("cache from a different policy kind".into())),
        }
    }
}

pub fn agent_checkpoint(agent: &Agent<AnyPolicy>, value_fn: Option<&MlpValueFunction>) -> Checkpoint {
    let mut ck = Checkpoint::new();
    let head = match agent.policy.head_kind() {
        HeadKind::Categorical { actions } => [0.0, actions as f64],
        HeadKind::Gaussian { dim } => [1.0, dim as f64],
    };
    ck.push_vector("head", &head);
    match &agent.policy {
        AnyPolicy::Mlp(p) => {
            ck.push_mlp("policy", p.net());
        }
        AnyPolicy::Linear(p) => {
            let mut v = vec![p.state_dim() as f64, p.actions() as f64];
            v.extend_from_slice(p.params());
            ck.push_vector("linear", &v);
        }
    }
    if let Some(n) = &agent.normalizer {
        let mut v = vec![n.count() as f64];
        v.extend_from_slice(n.mean());
        v.extend_from_slice(n.m2());
        ck.push_vector("normalizer", &v);
    }
    if let Some(v) = value_fn {
        ck.push_mlp("value", v.net());
    }
    ck
}

fn as_count(x: f64, what: &str) -> Result<usize> {
    if x >= 0.0 && x.fract() == 0.0 && x < 1e12 {
        Ok(x as usize)
    } else {
        Err(Error::InvalidSpec(format!("checkpoint: bad {what} {x}")))
    }
}

pub fn agent_from_checkpoint(ck: &Checkpoint) -> Result<Agent<AnyPolicy>> {
    let head = ck.vector("head")?;
    if head.len() != 2 {
        return Err(Error::InvalidSpec("checkpoint: head entry needs two values".into()));
    }
    let n = as_count(head[1], "head size")?;
    let kind = match head[0] {
        0.0 => HeadKind::Categorical { actions: n },
        1.0 => HeadKind::Gaussian { dim: n },
        k => return Err(Error::InvalidSpec(format!("checkpoint: unknown head kind {k}"))),
    };
    let policy = if ck.get("policy").is_some() {
        AnyPolicy::Mlp(MlpPolicy::from_mlp(ck.mlp("policy")?.clone(), kind)?)
    } else {
        let v = ck.vector("linear")?;
        if v.len() < 2 {
            return Err(Error::InvalidSpec("checkpoint: truncated linear policy".into()));
        }
        let (d, a) = (as_count(v[0], "state dimension")?, as_count(v[1], "action count")?);
        AnyPolicy::Linear(LinearSoftmaxPolicy::from_theta(d, a, v[2..].to_vec())?)
    };
    let normalizer = match ck.get("normalizer") {
        None => None,
        Some(_) => {
            let v = ck.vector("normalizer")?;
            let d = policy.state_dim();
            if v.len() != 1 + 2 * d {
                return Err(Error::InvalidSpec("checkpoint: normalizer size does not match the policy".into()));
            }
            let count = as_count(v[0], "normalizer count")? as u64;
            Some(RunningNormalizer::from_parts(count, v[1..=d].to_vec(), v[d + 1..].to_vec())?)
        }
    };
    Ok(Agent::new(policy, normalizer))
}

pub fn value_from_checkpoint(ck: &Checkpoint) -> Result<Option<MlpValueFunction>> {
    match ck.get("value") {
        None => Ok(None),
        Some(_) => Ok(Some(MlpValueFunction::from_mlp(ck.mlp("value")?.clone())?)),
    }
}
