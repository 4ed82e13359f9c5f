//! Proximal Policy Optimization with truncated GAE, shuffled mini-batches,
//! clip/KL surrogates, entropy regularization and KL early stopping.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::distributions::{gaussian_entropy, gaussian_kl, DiagonalGaussian};
use crate::envs::{Action, Env};
use crate::error::{check_dim, Error, Result};
use crate::nn::{Optimizer, OptimizerKind};
use crate::policy::{env_action, Agent, MlpValueFunction, Policy};
use crate::rollout::{evaluate_greedy, mean, returns_along_trace};

/// Floor on the per-batch advantage spread.
pub const ADVANTAGE_STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct PpoConfig {
    pub alpha_pi: f64,
    pub alpha_w: f64,
    pub iterations: usize,
    pub epochs: usize,
    /// Rollouts per iteration (`N`).
    pub rollouts: usize,
    /// Steps per rollout (`T`).
    pub horizon: usize,
    /// Mini-batch size (`M`).
    pub minibatch: usize,
    pub gamma: f64,
    pub lambda: f64,
    /// GAE truncation depth `k`; `None` uses every step left in the segment.
    pub gae_depth: Option<usize>,
    /// KL early-stop threshold `ξ` (may be `+∞`).
    pub kl_threshold: f64,
    /// 1 selects the clipped surrogate, 0 the KL-penalized one.
    pub nu: f64,
    pub clip_epsilon: f64,
    pub beta: f64,
    pub eta: f64,
    pub optimizer: OptimizerKind,
    pub eval: Option<EvalStop>,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            alpha_pi: 3e-4,
            alpha_w: 1e-3,
            iterations: 100,
            epochs: 10,
            rollouts: 4,
            horizon: 512,
            minibatch: 64,
            gamma: 0.99,
            lambda: 0.95,
            gae_depth: None,
            kl_threshold: 0.02,
            nu: 1.0,
            clip_epsilon: 0.2,
            beta: 1.0,
            eta: 0.0,
            optimizer: OptimizerKind::Adam,
            eval: None,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        for (name, v) in [("alpha_pi", self.alpha_pi), ("alpha_w", self.alpha_w)] {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(format!("{name} must be positive, got {v}"));
            }
        }
        if self.rollouts == 0 || self.horizon == 0 {
            errs.push("rollouts and horizon must be positive".into());
        }
        if self.minibatch < 2 {
            errs.push(format!("minibatch must be at least 2, got {}", self.minibatch));
        }
        if self.minibatch > self.rollouts * self.horizon {
            errs.push(format!(
                "minibatch {} exceeds buffer size {}",
                self.minibatch,
                self.rollouts * self.horizon
            ));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            errs.push(format!("gamma must be in [0, 1], got {}", self.gamma));
        }
        if !(0.0..1.0).contains(&self.lambda) {
            errs.push(format!("lambda must be in [0, 1), got {}", self.lambda));
        }
        if self.gae_depth == Some(0) {
            errs.push("gae depth must be at least 1".into());
        }
        if !(self.kl_threshold >= 0.0) {
            errs.push(format!("kl threshold must be non-negative, got {}", self.kl_threshold));
        }
        if self.nu != 0.0 && self.nu != 1.0 {
            errs.push(format!("nu must be 0 or 1, got {}", self.nu));
        }
        if !(self.clip_epsilon > 0.0) {
            errs.push(format!("clip epsilon must be positive, got {}", self.clip_epsilon));
        }
        if !(self.beta >= 0.0) || !(self.eta >= 0.0) {
            errs.push("beta and eta must be non-negative".into());
        }
        if let Some(e) = &self.eval {
            if e.every == 0 || e.episodes == 0 {
                errs.push("evaluation interval and episode count must be positive".into());
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }
}

/// Periodic greedy evaluation that ends training once `target` is reached.
/// Evaluation episodes run on a separate seed stream and are not counted
/// as training steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalStop {
    pub every: usize,
    pub episodes: usize,
    pub horizon: usize,
    pub target: f64,
}

/// `δ_t = R_{t+1} + γ v̂(S_{t+1}) − v̂(S_t)`; `values` carries the bootstrap
/// value of the state after the last reward (0 when terminal).
pub fn td_errors(rewards: &[f64], values: &[f64], gamma: f64) -> Result<Vec<f64>> {
    check_dim(rewards.len() + 1, values.len())?;
    Ok(rewards
        .iter()
        .enumerate()
        .map(|(t, r)| r + gamma * values[t + 1] - values[t])
        .collect())
}

/// `(1−λ) Σ_{i=1}^{m} λ^{i−1} Δ^{(i)}_t` with `Δ^{(i)}_t = Σ_{l<i} γ^l δ_{t+l}`
/// and `m = min(k, steps left)`.
///
/// Swapping the sums gives weights `(γλ)^l − γ^l λ^m` on `δ_{t+l}`, which
/// is evaluated by two backward recursions when `m` is the full tail.
pub fn truncated_gae(deltas: &[f64], gamma: f64, lambda: f64, k: Option<usize>) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda must be in [0, 1), got {lambda}")));
    }
    if k == Some(0) {
        return Err(Error::invalid("truncation depth must be at least 1"));
    }
    let len = deltas.len();
    let mut out = vec![0.0; len];
    match k {
        Some(k) if k < len => {
            for t in 0..len {
                let m = k.min(len - t);
                let lm = lambda.powi(m as i32);
                let (mut gl, mut g) = (1.0, 1.0);
                let mut acc = 0.0;
                for l in 0..m {
                    acc += (gl - g * lm) * deltas[t + l];
                    gl *= gamma * lambda;
                    g *= gamma;
                }
                out[t] = acc;
            }
        }
        _ => {
            let (mut x, mut y, mut lm) = (0.0, 0.0, 1.0);
            for t in (0..len).rev() {
                x = deltas[t] + gamma * lambda * x;
                y = deltas[t] + gamma * y;
                lm *= lambda;
                out[t] = x - lm * y;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperienceTuple {
    pub rollout: usize,
    pub step: usize,
    pub state: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    pub ret: f64,
    pub advantage: f64,
    /// Set only inside a mini-batch.
    pub normalized_advantage: Option<f64>,
    pub old_log_prob: f64,
    /// Head of `π_θold` at `state`, kept for the KL terms.
    pub old_head: Vec<f64>,
}

/// Raw data of one rollout of exactly `T` steps. The environment is reset
/// whenever it reports `done`, so one rollout may hold several episodes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Rollout {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub old_heads: Vec<Vec<f64>>,
    pub old_log_probs: Vec<f64>,
    /// State after the final step; bootstraps the tail when not done.
    pub last_state: Vec<f64>,
    /// Undiscounted returns of episodes that ended inside the rollout.
    pub episode_returns: Vec<f64>,
    /// Reward accumulated by the episode still running at the end.
    pub partial_return: f64,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

pub fn collect_rollouts<E: Env + ?Sized, P: Policy, R: Rng + ?Sized>(
    env: &mut E,
    policy: &P,
    rollouts: usize,
    horizon: usize,
    rng: &mut R,
) -> Result<Vec<Rollout>> {
    let kind = policy.head_kind();
    let mut out = Vec::with_capacity(rollouts);
    for _ in 0..rollouts {
        let mut ro = Rollout::default();
        let mut state = env.reset(rng.random());
        let mut running = 0.0;
        for _ in 0..horizon {
            let z = policy.head(&state)?;
            let action = kind.sample(&z, rng)?;
            let (lp, _) = kind.log_prob(&z, &action)?;
            let step = env.step(&env_action(&action))?;
            running += step.reward;
            ro.states.push(std::mem::replace(&mut state, step.state));
            ro.actions.push(action);
            ro.rewards.push(step.reward);
            ro.dones.push(step.done);
            ro.old_heads.push(z);
            ro.old_log_probs.push(lp);
            if step.done {
                ro.episode_returns.push(running);
                running = 0.0;
                state = env.reset(rng.random());
            }
        }
        ro.last_state = state;
        ro.partial_return = running;
        out.push(ro);
    }
    Ok(out)
}

/// Turns rollouts into experience tuples. Returns and advantages are
/// computed per episode segment: a segment ends at a terminal step
/// (bootstrap 0) or at the end of the rollout (bootstrap `v̂(last_state)`).
/// `rewards` replaces the environment rewards when given.
pub fn build_buffer(
    rollouts: &[Rollout],
    rewards: Option<&[Vec<f64>]>,
    value_fn: &MlpValueFunction,
    gamma: f64,
    lambda: f64,
    k: Option<usize>,
) -> Result<Vec<ExperienceTuple>> {
    if let Some(r) = rewards {
        check_dim(rollouts.len(), r.len())?;
    }
    let mut buffer = Vec::with_capacity(rollouts.iter().map(Rollout::len).sum());
    for (n, ro) in rollouts.iter().enumerate() {
        let rew: &[f64] = match rewards {
            Some(r) => {
                check_dim(ro.len(), r[n].len())?;
                &r[n]
            }
            None => &ro.rewards,
        };
        let values = ro.states.iter().map(|s| value_fn.value(s)).collect::<Result<Vec<_>>>()?;
        let mut start = 0;
        for t in 0..ro.len() {
            if !(ro.dones[t] || t + 1 == ro.len()) {
                continue;
            }
            let end = t + 1;
            let bootstrap = if ro.dones[t] { 0.0 } else { value_fn.value(&ro.last_state)? };
            let mut vals = values[start..end].to_vec();
            vals.push(bootstrap);
            let deltas = td_errors(&rew[start..end], &vals, gamma)?;
            let adv = truncated_gae(&deltas, gamma, lambda, k)?;
            let ret = returns_along_trace(&rew[start..end], gamma);
            for i in start..end {
                buffer.push(ExperienceTuple {
                    rollout: n,
                    step: i,
                    state: ro.states[i].clone(),
                    action: ro.actions[i].clone(),
                    reward: rew[i],
                    ret: ret[i - start],
                    advantage: adv[i - start],
                    normalized_advantage: None,
                    old_log_prob: ro.old_log_probs[i],
                    old_head: ro.old_heads[i].clone(),
                });
            }
            start = end;
        }
    }
    Ok(buffer)
}

/// `N` rollouts of `T` steps under the current policy, processed into tuples.
#[allow(clippy::too_many_arguments)]
pub fn create_experiences_buffer<E: Env + ?Sized, P: Policy, R: Rng + ?Sized>(
    env: &mut E,
    policy: &P,
    value_fn: &MlpValueFunction,
    rollouts: usize,
    horizon: usize,
    gamma: f64,
    lambda: f64,
    k: Option<usize>,
    rng: &mut R,
) -> Result<Vec<ExperienceTuple>> {
    let data = collect_rollouts(env, policy, rollouts, horizon, rng)?;
    build_buffer(&data, None, value_fn, gamma, lambda, k)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiniBatch {
    pub tuples: Vec<ExperienceTuple>,
    /// How many trailing tuples were resampled to top the batch up.
    pub filled: usize,
}

/// Shuffles the buffer and cuts it into `m`-sized batches. A short final
/// slice is topped up with tuples drawn uniformly from the batches already
/// formed. Advantages are standardized within each batch (population σ).
pub fn create_mini_batches<R: Rng + ?Sized>(
    buffer: &[ExperienceTuple],
    m: usize,
    rng: &mut R,
) -> Result<Vec<MiniBatch>> {
    if m < 2 {
        return Err(Error::invalid(format!("mini-batch size must be at least 2, got {m}")));
    }
    if buffer.len() < m && !buffer.is_empty() {
        return Err(Error::invalid(format!(
            "buffer of {} tuples cannot fill a batch of {m}",
            buffer.len()
        )));
    }
    let mut order: Vec<usize> = (0..buffer.len()).collect();
    order.shuffle(rng);
    let mut batches: Vec<MiniBatch> = Vec::with_capacity(buffer.len().div_ceil(m));
    for chunk in order.chunks(m) {
        let mut tuples: Vec<ExperienceTuple> = chunk.iter().map(|&i| buffer[i].clone()).collect();
        let filled = m - chunk.len();
        let formed = batches.len() * m;
        for _ in 0..filled {
            let j = rng.random_range(0..formed);
            tuples.push(batches[j / m].tuples[j % m].clone());
        }
        normalize_advantages(&mut tuples);
        batches.push(MiniBatch { tuples, filled });
    }
    Ok(batches)
}

fn normalize_advantages(tuples: &mut [ExperienceTuple]) {
    let n = tuples.len() as f64;
    let mu = tuples.iter().map(|t| t.advantage).sum::<f64>() / n;
    let var = tuples.iter().map(|t| (t.advantage - mu).powi(2)).sum::<f64>() / n;
    let sigma = var.sqrt().max(ADVANTAGE_STD_FLOOR);
    for t in tuples {
        t.normalized_advantage = Some((t.advantage - mu) / sigma);
    }
}

/// `π(a|s, θ) / π(a|s, θ_old)` from the cached old log-probability.
pub fn probability_ratio<P: Policy>(policy: &P, tuple: &ExperienceTuple) -> Result<f64> {
    let r = (policy.log_prob(&tuple.state, &tuple.action)? - tuple.old_log_prob).exp();
    if r.is_finite() {
        Ok(r)
    } else {
        Err(Error::NonFinite(format!(
            "probability ratio at rollout {}, step {}",
            tuple.rollout, tuple.step
        )))
    }
}

pub fn clip_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.max(1.0 - epsilon).min(1.0 + epsilon);
    (ratio * advantage).min(clipped * advantage)
}

pub fn kl_surrogate(ratio: f64, advantage: f64, kl: f64, beta: f64) -> f64 {
    ratio * advantage - beta * kl
}

/// Summed KL and entropy of factorized Gaussians.
pub fn factorized_gaussian_kl_and_entropy(new: &DiagonalGaussian, old: &DiagonalGaussian) -> Result<(f64, f64)> {
    Ok((gaussian_kl(new, old)?, gaussian_entropy(new)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyLoss {
    pub loss: f64,
    pub grad: Vec<f64>,
    /// Fraction of tuples with `|r − 1| > ε`.
    pub clip_fraction: f64,
    pub mean_kl: f64,
    pub mean_entropy: f64,
}

fn normalized(tuple: &ExperienceTuple) -> Result<f64> {
    tuple
        .normalized_advantage
        .ok_or_else(|| Error::Contract("tuple has no normalized advantage; batch it first".into()))
}

/// Mean over the batch of `−[ν J^CLIP + (1−ν) J^KL + η H]` and its gradient.
pub fn ppo_policy_loss<P: Policy>(batch: &[ExperienceTuple], policy: &P, config: &PpoConfig) -> Result<PolicyLoss> {
    if batch.is_empty() {
        return Err(Error::invalid("empty mini-batch"));
    }
    let kind = policy.head_kind();
    let inv_m = 1.0 / batch.len() as f64;
    let (nu, eps) = (config.nu, config.clip_epsilon);
    let mut out = PolicyLoss {
        loss: 0.0,
        grad: vec![0.0; policy.num_params()],
        clip_fraction: 0.0,
        mean_kl: 0.0,
        mean_entropy: 0.0,
    };
    for tuple in batch {
        let adv = normalized(tuple)?;
        let (z, cache) = policy.forward(&tuple.state)?;
        let (lp, dlp) = kind.log_prob(&z, &tuple.action)?;
        let (kl, dkl) = kind.kl(&z, &tuple.old_head)?;
        let (h, dh) = kind.entropy(&z)?;
        let r = (lp - tuple.old_log_prob).exp();
        if !r.is_finite() {
            return Err(Error::NonFinite(format!(
                "probability ratio at rollout {}, step {}",
                tuple.rollout, tuple.step
            )));
        }
        let clip = clip_surrogate(r, adv, eps);
        let objective = nu * clip + (1.0 - nu) * kl_surrogate(r, adv, kl, config.beta) + config.eta * h;
        out.loss -= objective * inv_m;
        out.mean_kl += kl * inv_m;
        out.mean_entropy += h * inv_m;
        if (r - 1.0).abs() > eps {
            out.clip_fraction += inv_m;
        }
        // ∂J/∂r for the min: the unclipped branch is active unless the
        // clipped product is strictly smaller.
        let clip_dr = if r * adv <= clip { adv } else { 0.0 };
        let dr = nu * clip_dr + (1.0 - nu) * adv;
        let dz: Vec<f64> = (0..z.len())
            .map(|j| {
                let dj = dr * r * dlp[j] - (1.0 - nu) * config.beta * dkl[j] + config.eta * dh[j];
                -dj * inv_m
            })
            .collect();
        policy.backward_into(&cache, &dz, &mut out.grad)?;
    }
    Ok(out)
}

/// Mean `(G − v̂(S))²` over the batch and its gradient.
pub fn ppo_value_loss(batch: &[ExperienceTuple], value_fn: &MlpValueFunction) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty mini-batch"));
    }
    let inv_m = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; value_fn.num_params()];
    for tuple in batch {
        let (v, cache) = value_fn.forward(&tuple.state)?;
        let err = tuple.ret - v;
        loss += err * err * inv_m;
        value_fn.backward_into(&cache, -2.0 * err * inv_m, &mut grad)?;
    }
    Ok((loss, grad))
}

/// Batch-average `KL(π_θ ‖ π_θold)`.
pub fn batch_kl<P: Policy>(batch: &[ExperienceTuple], policy: &P) -> Result<f64> {
    let kind = policy.head_kind();
    let mut total = 0.0;
    for tuple in batch {
        total += kind.kl(&policy.head(&tuple.state)?, &tuple.old_head)?.0;
    }
    Ok(total / batch.len().max(1) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    /// Environment steps consumed so far, this iteration included.
    pub steps: u64,
    pub mean_return: f64,
    /// Average of the post-update batch KL over the updates made.
    pub mean_kl: f64,
    pub epochs_ran: usize,
    pub updates: usize,
    pub clip_fraction: f64,
    pub early_stopped: bool,
    pub eval_return: Option<f64>,
}

pub fn write_iteration_csv<W: Write>(mut w: W, log: &[IterationLog]) -> std::io::Result<()> {
    writeln!(w, "iteration,mean_return,mean_kl,epochs_ran,clip_fraction")?;
    for row in log {
        writeln!(
            w,
            "{},{},{},{},{}",
            row.iteration, row.mean_return, row.mean_kl, row.epochs_ran, row.clip_fraction
        )?;
    }
    Ok(())
}

/// Mean of completed-episode returns, or of the running partial returns
/// when no episode finished.
pub fn rollout_mean_return(rollouts: &[Rollout]) -> f64 {
    let done: Vec<f64> = rollouts.iter().flat_map(|r| r.episode_returns.iter().copied()).collect();
    if done.is_empty() {
        mean(&rollouts.iter().map(|r| r.partial_return).collect::<Vec<_>>())
    } else {
        mean(&done)
    }
}

/// PPO state between iterations, so callers (GAIL) can substitute rewards.
#[derive(Debug, Clone)]
pub struct PpoTrainer<P> {
    pub policy: P,
    pub value_fn: MlpValueFunction,
    config: PpoConfig,
    pi_opt: Optimizer,
    v_opt: Optimizer,
    rng: ChaCha8Rng,
    steps: u64,
    iteration: usize,
}

impl<P: Policy> PpoTrainer<P> {
    pub fn new(policy: P, value_fn: MlpValueFunction, config: PpoConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        check_dim(policy.state_dim(), value_fn.net().input_dim())?;
        Ok(PpoTrainer {
            pi_opt: Optimizer::new(config.optimizer, policy.num_params(), 0.0),
            v_opt: Optimizer::new(config.optimizer, value_fn.num_params(), 0.0),
            policy,
            value_fn,
            config,
            rng: ChaCha8Rng::seed_from_u64(seed),
            steps: 0,
            iteration: 0,
        })
    }

    pub fn config(&self) -> &PpoConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn collect<E: Env + ?Sized>(&mut self, env: &mut E) -> Result<Vec<Rollout>> {
        let data = collect_rollouts(env, &self.policy, self.config.rollouts, self.config.horizon, &mut self.rng)?;
        self.steps += data.iter().map(|r| r.len() as u64).sum::<u64>();
        Ok(data)
    }

    /// One learning phase on freshly collected rollouts. On a non-finite
    /// gradient the parameters are restored to their values at the start of
    /// the phase and the error is returned.
    pub fn update(&mut self, rollouts: &[Rollout], rewards: Option<&[Vec<f64>]>) -> Result<IterationLog> {
        let c = self.config.clone();
        let buffer = build_buffer(rollouts, rewards, &self.value_fn, c.gamma, c.lambda, c.gae_depth)?;
        let theta_old = self.policy.params().to_vec();
        let w_old = self.value_fn.params().to_vec();
        let result = self.epochs(&buffer, &c);
        if result.is_err() {
            self.policy.params_mut().copy_from_slice(&theta_old);
            self.value_fn.params_mut().copy_from_slice(&w_old);
        }
        let (epochs_ran, updates, kl_sum, clip_sum, early_stopped) = result?;
        self.iteration += 1;
        Ok(IterationLog {
            iteration: self.iteration,
            steps: self.steps,
            mean_return: rollout_mean_return(rollouts),
            mean_kl: kl_sum / updates.max(1) as f64,
            epochs_ran,
            updates,
            clip_fraction: clip_sum / updates.max(1) as f64,
            early_stopped,
            eval_return: None,
        })
    }

    fn epochs(&mut self, buffer: &[ExperienceTuple], c: &PpoConfig) -> Result<(usize, usize, f64, f64, bool)> {
        let (mut epochs_ran, mut updates, mut kl_sum, mut clip_sum) = (0, 0, 0.0, 0.0);
        for _ in 0..c.epochs {
            epochs_ran += 1;
            let batches = create_mini_batches(buffer, c.minibatch, &mut self.rng)?;
            for batch in &batches {
                let pl = ppo_policy_loss(&batch.tuples, &self.policy, c)?;
                let (_, vg) = ppo_value_loss(&batch.tuples, &self.value_fn)?;
                if !pl.grad.iter().chain(&vg).all(|g| g.is_finite()) {
                    return Err(Error::NonFinite(format!("gradient in iteration {}", self.iteration + 1)));
                }
                self.pi_opt.step(self.policy.params_mut(), &pl.grad, c.alpha_pi)?;
                self.v_opt.step(self.value_fn.params_mut(), &vg, c.alpha_w)?;
                let kl = batch_kl(&batch.tuples, &self.policy)?;
                updates += 1;
                kl_sum += kl;
                clip_sum += pl.clip_fraction;
                if kl > c.kl_threshold {
                    return Ok((epochs_ran, updates, kl_sum, clip_sum, true));
                }
            }
        }
        Ok((epochs_ran, updates, kl_sum, clip_sum, false))
    }

    pub fn iterate<E: Env + ?Sized>(&mut self, env: &mut E) -> Result<IterationLog> {
        let data = self.collect(env)?;
        self.update(&data, None)
    }
}

#[derive(Debug, Clone)]
pub struct PpoOutcome<P> {
    pub agent: Agent<P>,
    pub value_fn: MlpValueFunction,
    pub log: Vec<IterationLog>,
    pub steps: u64,
    /// Iteration at which the evaluation target was met.
    pub reached_target_at: Option<usize>,
}

pub fn ppo_train<E: Env + ?Sized, P: Policy>(
    env: &mut E,
    policy: P,
    value_fn: MlpValueFunction,
    config: &PpoConfig,
    seed: u64,
) -> Result<PpoOutcome<P>> {
    let mut trainer = PpoTrainer::new(policy, value_fn, config.clone(), seed)?;
    let mut log = Vec::with_capacity(config.iterations);
    let mut reached = None;
    for i in 0..config.iterations {
        let mut row = trainer.iterate(env)?;
        if let Some(e) = config.eval {
            if (i + 1) % e.every == 0 {
                let agent = Agent::new(trainer.policy.clone(), None);
                let eval_seed = seed.wrapping_mul(0x9E37_79B9).wrapping_add(i as u64 * 1000);
                let score = mean(&evaluate_greedy(env, &agent, e.episodes, e.horizon, eval_seed)?);
                row.eval_return = Some(score);
                if score >= e.target {
                    reached = Some(i + 1);
                    log.push(row);
                    break;
                }
            }
        }
        log.push(row);
    }
    Ok(PpoOutcome {
        steps: trainer.steps,
        agent: Agent::new(trainer.policy, None),
        value_fn: trainer.value_fn,
        log,
        reached_target_at: reached,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{ActionSpace, Step};
    use crate::nn::{Activation, Init};
    use crate::policy::{HeadKind, LinearSoftmaxPolicy, MlpPolicy};
    use proptest::prelude::*;
    use rand::Rng;

    /// Reward 1 per step, episodes of `len` steps, state = [step in episode].
    struct Counter {
        len: usize,
        t: usize,
    }

    impl Env for Counter {
        fn reset(&mut self, _seed: u64) -> Vec<f64> {
            self.t = 0;
            vec![0.0]
        }
        fn step(&mut self, _a: &Action) -> Result<Step> {
            self.t += 1;
            Ok(Step {
                state: vec![self.t as f64],
                reward: 1.0,
                done: self.t == self.len,
            })
        }
        fn action_space(&self) -> ActionSpace {
            ActionSpace::Discrete(2)
        }
        fn state_dim(&self) -> usize {
            1
        }
    }

    fn zero_value(dim: usize) -> MlpValueFunction {
        MlpValueFunction::new(dim, &[3], Activation::Tanh, Init::Zeros, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    fn brute_force_gae(deltas: &[f64], gamma: f64, lambda: f64, k: usize) -> Vec<f64> {
        (0..deltas.len())
            .map(|t| {
                let m = k.min(deltas.len() - t);
                let mut total = 0.0;
                for i in 1..=m {
                    let est: f64 = (0..i).map(|l| gamma.powi(l as i32) * deltas[t + l]).sum();
                    total += lambda.powi(i as i32 - 1) * est;
                }
                (1.0 - lambda) * total
            })
            .collect()
    }

    #[test]
    fn td_error_examples() {
        assert_eq!(td_errors(&[1.0, 2.0], &[0.0; 3], 0.9).unwrap(), vec![1.0, 2.0]);
        let d = td_errors(&[1.0], &[2.0, 3.0], 0.9).unwrap();
        assert!((d[0] - 1.7).abs() < 1e-12);
        assert!(td_errors(&[1.0], &[2.0], 0.9).is_err());
    }

    #[test]
    fn gae_special_cases() {
        let d = [0.5, -1.0, 2.0, 0.25];
        assert_eq!(truncated_gae(&d, 0.9, 0.0, None).unwrap(), d.to_vec());
        let k1 = truncated_gae(&d, 0.9, 0.6, Some(1)).unwrap();
        for (a, b) in k1.iter().zip(&d) {
            assert!((a - 0.4 * b).abs() < 1e-15);
        }
        assert!(truncated_gae(&d, 0.9, 1.0, None).is_err());
        assert!(truncated_gae(&d, 0.9, 0.5, Some(0)).is_err());
    }

    proptest! {
        #[test]
        fn gae_matches_brute_force(
            deltas in prop::collection::vec(-5.0f64..5.0, 1..40),
            gamma in 0.0f64..=1.0,
            lambda in 0.0f64..0.999,
            k in 1usize..50,
        ) {
            let fast = truncated_gae(&deltas, gamma, lambda, Some(k)).unwrap();
            let slow = brute_force_gae(&deltas, gamma, lambda, k);
            for (a, b) in fast.iter().zip(&slow) {
                prop_assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
            }
            if k >= deltas.len() {
                prop_assert_eq!(truncated_gae(&deltas, gamma, lambda, None).unwrap(), fast);
            }
        }
    }

    #[test]
    fn hand_traced_buffer() {
        let mut env = Counter { len: 2, t: 0 };
        let policy = LinearSoftmaxPolicy::zeros(1, 1);
        let (g, l) = (0.9, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let buf = create_experiences_buffer(&mut env, &policy, &zero_value(1), 1, 3, g, l, None, &mut rng).unwrap();
        assert_eq!(buf.len(), 3);
        let states: Vec<f64> = buf.iter().map(|t| t.state[0]).collect();
        assert_eq!(states, vec![0.0, 1.0, 0.0]);
        let rets: Vec<f64> = buf.iter().map(|t| t.ret).collect();
        assert_eq!(rets, vec![1.0 + g, 1.0, 1.0]);
        let first = (1.0 - l * l) + g * l * (1.0 - l);
        let adv: Vec<f64> = buf.iter().map(|t| t.advantage).collect();
        for (a, b) in adv.iter().zip([first, 1.0 - l, 1.0 - l]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(buf.iter().all(|t| t.old_log_prob == 0.0 && t.normalized_advantage.is_none()));
    }

    #[test]
    fn buffer_size_and_seed_dependence() {
        let policy = LinearSoftmaxPolicy::zeros(1, 2);
        let run = |seed| {
            let mut env = Counter { len: 1000, t: 0 };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            create_experiences_buffer(&mut env, &policy, &zero_value(1), 3, 20, 0.9, 0.9, None, &mut rng).unwrap()
        };
        let a = run(1);
        assert_eq!(a.len(), 60);
        let acts = |b: &[ExperienceTuple]| b.iter().map(|t| t.action.clone()).collect::<Vec<_>>();
        assert_ne!(acts(&a), acts(&run(2)));
        assert_eq!(a, run(1));
    }

    fn toy_buffer(n: usize, rng: &mut ChaCha8Rng) -> Vec<ExperienceTuple> {
        (0..n)
            .map(|i| ExperienceTuple {
                rollout: i / 4,
                step: i % 4,
                state: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                action: Action::Discrete(rng.random_range(0..3)),
                reward: 1.0,
                ret: rng.random_range(-3.0..3.0),
                advantage: rng.random_range(-2.0..2.0),
                normalized_advantage: None,
                old_log_prob: -(3f64).ln(),
                old_head: vec![0.0; 3],
            })
            .collect()
    }

    #[test]
    fn mini_batch_counts_and_fill() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b10 = create_mini_batches(&toy_buffer(10, &mut rng), 5, &mut rng).unwrap();
        assert_eq!(b10.len(), 2);
        assert!(b10.iter().all(|b| b.filled == 0 && b.tuples.len() == 5));
        let buf = toy_buffer(7, &mut rng);
        let b7 = create_mini_batches(&buf, 5, &mut rng).unwrap();
        assert_eq!(b7.len(), 2);
        assert_eq!(b7[1].filled, 3);
        for t in &b7[1].tuples[2..] {
            assert!(b7[0].tuples.iter().any(|u| (u.rollout, u.step) == (t.rollout, t.step)));
        }
        assert!(create_mini_batches(&buf, 1, &mut rng).is_err());
        assert!(create_mini_batches(&buf, 8, &mut rng).is_err());
    }

    proptest! {
        #[test]
        fn batches_cover_buffer_once_and_are_standardized(n in 4usize..80, m in 2usize..20, seed in 0u64..1000) {
            prop_assume!(m <= n);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let buf = toy_buffer(n, &mut rng);
            let batches = create_mini_batches(&buf, m, &mut rng).unwrap();
            let mut seen: Vec<(usize, usize)> = batches
                .iter()
                .flat_map(|b| b.tuples[..m - b.filled].iter().map(|t| (t.rollout, t.step)))
                .collect();
            seen.sort_unstable();
            let mut expected: Vec<(usize, usize)> = buf.iter().map(|t| (t.rollout, t.step)).collect();
            expected.sort_unstable();
            prop_assert_eq!(seen, expected);
            for b in &batches {
                let xs: Vec<f64> = b.tuples.iter().map(|t| t.normalized_advantage.unwrap()).collect();
                let mu = xs.iter().sum::<f64>() / m as f64;
                let sd = (xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / m as f64).sqrt();
                prop_assert!(mu.abs() < 1e-9);
                prop_assert!((sd - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn constant_advantages_hit_the_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut buf = toy_buffer(4, &mut rng);
        buf.iter_mut().for_each(|t| t.advantage = 2.5);
        let b = create_mini_batches(&buf, 4, &mut rng).unwrap();
        assert!(b[0].tuples.iter().all(|t| t.normalized_advantage == Some(0.0)));
    }

    #[test]
    fn surrogate_examples() {
        assert!((clip_surrogate(1.5, 1.0, 0.2) - 1.2).abs() < 1e-15);
        assert!((clip_surrogate(0.5, -1.0, 0.2) + 0.8).abs() < 1e-15);
        assert_eq!(clip_surrogate(1.0, -0.7, 0.3), -0.7);
        assert!((kl_surrogate(1.2, 0.5, 0.01, 3.0) - 0.57).abs() < 1e-15);
        assert_eq!(kl_surrogate(1.3, 2.0, 0.4, 0.0), 2.6);
    }

    #[test]
    fn clip_is_a_pessimistic_bound() {
        for i in 0..=40 {
            let r = i as f64 * 0.075;
            for adv in [-2.0, -0.5, 0.0, 0.3, 1.7] {
                for eps in [0.05, 0.2, 0.5] {
                    let c = clip_surrogate(r, adv, eps);
                    let clipped = r.max(1.0 - eps).min(1.0 + eps);
                    assert!(c <= r * adv + 1e-15);
                    assert!(c <= (r * adv).max(clipped * adv) + 1e-15);
                }
            }
        }
    }

    #[test]
    fn factorized_gaussian_sums() {
        let new = DiagonalGaussian::new(vec![0.0, 0.0], vec![3.0, 5.0]).unwrap();
        let (kl, h) = factorized_gaussian_kl_and_entropy(&new, &new).unwrap();
        assert!(kl.abs() < 1e-15);
        assert!((h - 5.55).abs() < 0.01);
        let short = DiagonalGaussian::new(vec![0.0], vec![1.0]).unwrap();
        assert!(factorized_gaussian_kl_and_entropy(&new, &short).is_err());
    }

    fn toy_policy(rng: &mut ChaCha8Rng) -> MlpPolicy {
        MlpPolicy::new(2, &[4], Activation::Tanh, HeadKind::Categorical { actions: 3 }, Init::FanInUniform, rng).unwrap()
    }

    fn snapshot(policy: &MlpPolicy, buf: &mut [ExperienceTuple]) {
        for t in buf {
            t.old_head = policy.head(&t.state).unwrap();
            t.old_log_prob = policy.log_prob(&t.state, &t.action).unwrap();
        }
    }

    #[test]
    fn unchanged_policy_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let policy = toy_policy(&mut rng);
        let mut buf = toy_buffer(8, &mut rng);
        snapshot(&policy, &mut buf);
        let batch = create_mini_batches(&buf, 8, &mut rng).unwrap().remove(0).tuples;
        for t in &batch {
            assert!((probability_ratio(&policy, t).unwrap() - 1.0).abs() < 1e-12);
        }
        let clip = PpoConfig { eta: 0.0, ..Default::default() };
        let l = ppo_policy_loss(&batch, &policy, &clip).unwrap();
        let mean_adv = batch.iter().map(|t| t.normalized_advantage.unwrap()).sum::<f64>() / 8.0;
        assert!((l.loss + mean_adv).abs() < 1e-12);
        assert!(l.mean_kl.abs() < 1e-12);
        let kl = PpoConfig { nu: 0.0, beta: 7.0, ..clip };
        let lk = ppo_policy_loss(&batch, &policy, &kl).unwrap();
        for (a, b) in l.grad.iter().zip(&lk.grad) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn ratio_matches_probability_quotient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let old = toy_policy(&mut rng);
        let mut new = old.clone();
        new.params_mut().iter_mut().for_each(|p| *p += rng.random_range(-0.3..0.3));
        let mut buf = toy_buffer(20, &mut rng);
        snapshot(&old, &mut buf);
        for t in &buf {
            let Action::Discrete(a) = t.action else { unreachable!() };
            let p_new = crate::distributions::softmax(&new.head(&t.state).unwrap()).unwrap().probs()[a];
            let p_old = crate::distributions::softmax(&old.head(&t.state).unwrap()).unwrap().probs()[a];
            assert!((probability_ratio(&new, t).unwrap() - p_new / p_old).abs() < 1e-10);
        }
    }

    #[test]
    fn value_loss_examples() {
        let v = zero_value(2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut buf = toy_buffer(2, &mut rng);
        buf[0].ret = 1.0;
        buf[1].ret = 3.0;
        assert!((ppo_value_loss(&buf, &v).unwrap().0 - 5.0).abs() < 1e-15);
        buf.iter_mut().for_each(|t| t.ret = 0.0);
        assert_eq!(ppo_value_loss(&buf, &v).unwrap().0, 0.0);
    }

    fn cartpole_setup(seed: u64) -> (MlpPolicy, MlpValueFunction) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = MlpPolicy::new(4, &[16], Activation::Tanh, HeadKind::Categorical { actions: 2 }, Init::FanInUniform, &mut rng)
            .unwrap();
        let v = MlpValueFunction::new(4, &[16], Activation::Tanh, Init::FanInUniform, &mut rng).unwrap();
        (p, v)
    }

    #[test]
    fn zero_threshold_allows_one_update() {
        let (p, v) = cartpole_setup(0);
        let cfg = PpoConfig {
            iterations: 3,
            rollouts: 1,
            horizon: 64,
            minibatch: 16,
            kl_threshold: 0.0,
            ..Default::default()
        };
        let out = ppo_train(&mut crate::envs::CartPole::new(), p, v, &cfg, 1).unwrap();
        assert!(out.log.iter().all(|l| l.updates == 1 && l.epochs_ran == 1 && l.early_stopped));
        assert_eq!(out.steps, 3 * 64);
    }

    #[test]
    fn infinite_threshold_runs_every_update() {
        let (p, v) = cartpole_setup(0);
        let cfg = PpoConfig {
            iterations: 2,
            epochs: 3,
            rollouts: 2,
            horizon: 30,
            minibatch: 16,
            kl_threshold: f64::INFINITY,
            ..Default::default()
        };
        let out = ppo_train(&mut crate::envs::CartPole::new(), p, v, &cfg, 1).unwrap();
        // 60 tuples in batches of 16 → 4 batches per epoch
        assert!(out.log.iter().all(|l| l.updates == 12 && l.epochs_ran == 3 && !l.early_stopped));
    }

    #[test]
    fn config_rejects_bad_values() {
        let bad = PpoConfig {
            lambda: 1.0,
            nu: 0.5,
            minibatch: 10_000,
            ..Default::default()
        };
        let Err(Error::Validation(errs)) = bad.validate() else { panic!() };
        assert_eq!(errs.len(), 3);
        assert!(PpoConfig::default().validate().is_ok());
    }

    #[test]
    fn csv_header() {
        let mut out = Vec::new();
        write_iteration_csv(&mut out, &[]).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "iteration,mean_return,mean_kl,epochs_ran,clip_fraction\n");
    }
}
