use crate::error::{check_dim, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        AdamState {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
        }
    }
}

/// One bias-corrected Adam descent step.
pub fn adam_step(params: &mut [f64], grad: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    check_dim(params.len(), grad.len())?;
    check_dim(params.len(), state.m.len())?;
    check_dim(params.len(), state.v.len())?;
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        let g = grad[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}

/// `θ ← θ − lr·(g + 2λθ)`: plain descent on `L + λ‖θ‖²`.
pub fn sgd_step_with_weight_decay(params: &mut [f64], grad: &[f64], lr: f64, lambda: f64) -> Result<()> {
    check_dim(params.len(), grad.len())?;
    for (p, &g) in params.iter_mut().zip(grad) {
        *p -= lr * (g + 2.0 * lambda * *p);
    }
    Ok(())
}

/// Adds the gradient of `λ‖θ‖²` to `grad`.
pub fn add_weight_decay(grad: &mut [f64], params: &[f64], lambda: f64) {
    if lambda == 0.0 {
        return;
    }
    for (g, &p) in grad.iter_mut().zip(params) {
        *g += 2.0 * lambda * p;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

impl OptimizerKind {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "sgd" => Some(OptimizerKind::Sgd),
            "adam" => Some(OptimizerKind::Adam),
            _ => None,
        }
    }
}

/// Descent optimizer with optional L2 weight decay folded into the gradient.
#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Sgd { weight_decay: f64 },
    Adam { state: AdamState, weight_decay: f64 },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, num_params: usize, weight_decay: f64) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { weight_decay },
            OptimizerKind::Adam => Optimizer::Adam {
                state: AdamState::new(num_params),
                weight_decay,
            },
        }
    }

    /// Descends along `grad` (a loss gradient).
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        match self {
            Optimizer::Sgd { weight_decay } => sgd_step_with_weight_decay(params, grad, lr, *weight_decay),
            Optimizer::Adam { state, weight_decay } => {
                if *weight_decay == 0.0 {
                    adam_step(params, grad, state, lr)
                } else {
                    let mut g = grad.to_vec();
                    add_weight_decay(&mut g, params, *weight_decay);
                    adam_step(params, &g, state, lr)
                }
            }
        }
    }
}
