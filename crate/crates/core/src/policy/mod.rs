//! Differentiable policies and state-value functions.
//!
//! A policy maps a state to a head vector `z` (see [`HeadKind`]); losses
//! produce `∂L/∂z` and the policy backpropagates that into its parameters.

mod head;

pub use head::{ActionDistribution, HeadKind};

use rand::Rng;

use crate::distributions::{softmax, tanh_squash};
use crate::envs::Action;
use crate::error::{check_dim, Error, Result};
use crate::nn::{Activation, ForwardCache, Init, Mlp, RunningNormalizer};

pub trait Policy: Clone + Send + Sync {
    type Cache;

    fn head_kind(&self) -> HeadKind;
    fn state_dim(&self) -> usize;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    fn forward(&self, state: &[f64]) -> Result<(Vec<f64>, Self::Cache)>;
    /// Accumulates `(∂z/∂θ)ᵀ dz` into `grad`.
    fn backward_into(&self, cache: &Self::Cache, dz: &[f64], grad: &mut [f64]) -> Result<()>;

    fn num_params(&self) -> usize {
        self.params().len()
    }

    fn head(&self, state: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(state)?.0)
    }

    fn sample<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<Action> {
        self.head_kind().sample(&self.head(state)?, rng)
    }

    fn greedy(&self, state: &[f64]) -> Result<Action> {
        self.head_kind().greedy(&self.head(state)?)
    }

    fn log_prob(&self, state: &[f64], action: &Action) -> Result<f64> {
        Ok(self.head_kind().log_prob(&self.head(state)?, action)?.0)
    }

    /// Adds `scale · ∇θ ln π(a|s)` to `grad`; returns `ln π(a|s)`.
    fn grad_log_prob_into(&self, state: &[f64], action: &Action, scale: f64, grad: &mut [f64]) -> Result<f64> {
        let (z, cache) = self.forward(state)?;
        let (lp, mut dz) = self.head_kind().log_prob(&z, action)?;
        dz.iter_mut().for_each(|d| *d *= scale);
        self.backward_into(&cache, &dz, grad)?;
        Ok(lp)
    }
}

/// Maps a policy action to what the environment receives: continuous
/// samples are squashed by `tanh`, discrete actions pass through.
pub fn env_action(action: &Action) -> Action {
    match action {
        Action::Continuous(x) => Action::Continuous(tanh_squash(x)),
        a => a.clone(),
    }
}

/// Softmax over linear preferences `h(s, a) = θ_aᵀ s`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSoftmaxPolicy {
    state_dim: usize,
    actions: usize,
    /// `θ_a` occupies `theta[a*d .. (a+1)*d]`.
    theta: Vec<f64>,
}

impl LinearSoftmaxPolicy {
    pub fn zeros(state_dim: usize, actions: usize) -> Self {
        LinearSoftmaxPolicy {
            state_dim,
            actions,
            theta: vec![0.0; state_dim * actions],
        }
    }

    /// Entries drawn from `U(−scale, scale)`.
    pub fn random<R: Rng + ?Sized>(state_dim: usize, actions: usize, scale: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(state_dim, actions);
        if scale > 0.0 {
            p.theta.iter_mut().for_each(|t| *t = rng.random_range(-scale..scale));
        }
        p
    }

    pub fn from_theta(state_dim: usize, actions: usize, theta: Vec<f64>) -> Result<Self> {
        check_dim(state_dim * actions, theta.len())?;
        Ok(LinearSoftmaxPolicy {
            state_dim,
            actions,
            theta,
        })
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn theta(&self, a: usize) -> &[f64] {
        &self.theta[a * self.state_dim..(a + 1) * self.state_dim]
    }

    pub fn preferences(&self, state: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.state_dim, state.len())?;
        Ok((0..self.actions)
            .map(|a| self.theta(a).iter().zip(state).map(|(t, s)| t * s).sum())
            .collect())
    }

    pub fn probabilities(&self, state: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.preferences(state)?)?.probs().to_vec())
    }

    /// Closed form `∇ ln π(a|s) = x(s,a) − Σ_b π(b|s) x(s,b)`; block `b` is
    /// `(1[b = a] − π(b|s)) s`.
    pub fn grad_log_prob(&self, state: &[f64], action: usize) -> Result<Vec<f64>> {
        if action >= self.actions {
            return Err(Error::invalid(format!("action {action} out of range")));
        }
        let probs = self.probabilities(state)?;
        let mut grad = Vec::with_capacity(self.theta.len());
        for (b, &pb) in probs.iter().enumerate() {
            let coef = f64::from(u8::from(b == action)) - pb;
            grad.extend(state.iter().map(|s| coef * s));
        }
        Ok(grad)
    }
}

impl Policy for LinearSoftmaxPolicy {
    type Cache = Vec<f64>;

    fn head_kind(&self) -> HeadKind {
        HeadKind::Categorical { actions: self.actions }
    }

    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn params(&self) -> &[f64] {
        &self.theta
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    fn forward(&self, state: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((self.preferences(state)?, state.to_vec()))
    }

    fn backward_into(&self, state: &Vec<f64>, dz: &[f64], grad: &mut [f64]) -> Result<()> {
        check_dim(self.actions, dz.len())?;
        check_dim(self.theta.len(), grad.len())?;
        for (a, &d) in dz.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let row = &mut grad[a * self.state_dim..(a + 1) * self.state_dim];
            row.iter_mut().zip(state).for_each(|(g, s)| *g += d * s);
        }
        Ok(())
    }
}

/// MLP emitting the head vector directly (identity output layer).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpPolicy {
    net: Mlp,
    kind: HeadKind,
}

impl MlpPolicy {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        hidden: &[usize],
        activation: Activation,
        kind: HeadKind,
        init: Init,
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![state_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(kind.width());
        let net = Mlp::with_init(&sizes, activation, Activation::Identity, init, rng)?;
        Ok(MlpPolicy { net, kind })
    }

    pub fn from_mlp(net: Mlp, kind: HeadKind) -> Result<Self> {
        check_dim(kind.width(), net.output_dim())?;
        Ok(MlpPolicy { net, kind })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    /// Sets the output biases of the `ρ` half of a Gaussian head.
    pub fn set_log_std_bias(&mut self, log_std: f64) -> Result<()> {
        let HeadKind::Gaussian { dim } = self.kind else {
            return Err(Error::invalid("not a Gaussian policy"));
        };
        let last = self.net.num_layers() - 1;
        for i in dim..2 * dim {
            self.net.set_bias(last, i, log_std);
        }
        Ok(())
    }
}

impl Policy for MlpPolicy {
    type Cache = ForwardCache;

    fn head_kind(&self) -> HeadKind {
        self.kind
    }

    fn state_dim(&self) -> usize {
        self.net.input_dim()
    }

    fn params(&self) -> &[f64] {
        self.net.params()
    }

    fn params_mut(&mut self) -> &mut [f64] {
        self.net.params_mut()
    }

    fn forward(&self, state: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        self.net.forward(state)
    }

    fn backward_into(&self, cache: &ForwardCache, dz: &[f64], grad: &mut [f64]) -> Result<()> {
        self.net.backward_into(cache, dz, grad)
    }
}

/// `v̂(s, w)`: an MLP with one linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpValueFunction {
    net: Mlp,
}

impl MlpValueFunction {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        hidden: &[usize],
        activation: Activation,
        init: Init,
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![state_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Ok(MlpValueFunction {
            net: Mlp::with_init(&sizes, activation, Activation::Identity, init, rng)?,
        })
    }

    pub fn from_mlp(net: Mlp) -> Result<Self> {
        check_dim(1, net.output_dim())?;
        Ok(MlpValueFunction { net })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn params(&self) -> &[f64] {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.net.params_mut()
    }

    pub fn num_params(&self) -> usize {
        self.net.num_params()
    }

    pub fn value(&self, state: &[f64]) -> Result<f64> {
        Ok(self.net.predict(state)?[0])
    }

    pub fn forward(&self, state: &[f64]) -> Result<(f64, ForwardCache)> {
        let (out, cache) = self.net.forward(state)?;
        Ok((out[0], cache))
    }

    /// Accumulates `dv · ∇w v̂(s)` into `grad`.
    pub fn backward_into(&self, cache: &ForwardCache, dv: f64, grad: &mut [f64]) -> Result<()> {
        self.net.backward_into(cache, &[dv], grad)
    }
}

/// A policy bundled with the state normalizer it was trained behind.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent<P> {
    pub policy: P,
    pub normalizer: Option<RunningNormalizer>,
}

impl<P: Policy> Agent<P> {
    pub fn new(policy: P, normalizer: Option<RunningNormalizer>) -> Self {
        Agent { policy, normalizer }
    }

    /// The network input for a raw state, without updating statistics.
    pub fn prepare(&self, state: &[f64]) -> Result<Vec<f64>> {
        match &self.normalizer {
            Some(n) => n.apply(state),
            None => Ok(state.to_vec()),
        }
    }

    pub fn greedy(&self, state: &[f64]) -> Result<Action> {
        self.policy.greedy(&self.prepare(state)?)
    }

    pub fn sample<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<Action> {
        self.policy.sample(&self.prepare(state)?, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_action_split() {
        // left = 0 (θ_1), right = 1 (θ_2)
        let p = LinearSoftmaxPolicy::from_theta(2, 2, vec![0.3, -0.2, 0.1, 0.4]).unwrap();
        let s = [0.5, -1.5];
        let pr = p.probabilities(&s).unwrap();
        let g = p.grad_log_prob(&s, 0).unwrap();
        for i in 0..2 {
            assert!((g[i] - pr[1] * s[i]).abs() < 1e-15);
            assert!((g[2 + i] + pr[1] * s[i]).abs() < 1e-15);
        }
        let g = p.grad_log_prob(&s, 1).unwrap();
        for i in 0..2 {
            assert!((g[i] + pr[0] * s[i]).abs() < 1e-15);
            assert!((g[2 + i] - pr[0] * s[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn saturated_policy_has_zero_gradient() {
        let p = LinearSoftmaxPolicy::from_theta(1, 2, vec![1000.0, -1000.0]).unwrap();
        let g = p.grad_log_prob(&[1.0], 0).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn closed_form_matches_backprop_path_and_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let p = LinearSoftmaxPolicy::random(4, 3, 1.0, &mut rng);
            let s: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let a = rng.random_range(0..3);
            let closed = p.grad_log_prob(&s, a).unwrap();
            let mut via = vec![0.0; 12];
            p.grad_log_prob_into(&s, &Action::Discrete(a), 1.0, &mut via).unwrap();
            for i in 0..12 {
                let h = 1e-6;
                let mut q = p.clone();
                q.theta[i] += h;
                let up = q.log_prob(&s, &Action::Discrete(a)).unwrap();
                q.theta[i] -= 2.0 * h;
                let down = q.log_prob(&s, &Action::Discrete(a)).unwrap();
                let fd = (up - down) / (2.0 * h);
                assert!((closed[i] - via[i]).abs() < 1e-14);
                assert!((closed[i] - fd).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn gaussian_mlp_policy() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut p = MlpPolicy::new(
            3,
            &[8],
            Activation::Tanh,
            HeadKind::Gaussian { dim: 2 },
            Init::FanInUniform,
            &mut rng,
        )
        .unwrap();
        p.set_log_std_bias(-0.5).unwrap();
        let z = p.head(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(z.len(), 4);
        match p.head_kind().distribution(&z).unwrap() {
            ActionDistribution::Gaussian(d) => assert!(d.std().iter().all(|&s| s > 0.0)),
            _ => unreachable!(),
        }
        let a = p.sample(&[0.1, 0.2, 0.3], &mut rng).unwrap();
        let Action::Continuous(x) = env_action(&a) else { unreachable!() };
        assert!(x.iter().all(|v| v.abs() <= 1.0));
    }
}
