//! Imitation learning: Behavioral Cloning, DAgger and GAIL.

mod dataset;
mod gail;

pub use dataset::{DemoPair, DemonstrationDataset, Trajectory, DEMOS_HEADER};
pub use gail::{
    discriminator_accuracy, gail_discriminator_loss, gail_label_dataset, gail_reward, gail_train, Discriminator,
    GailConfig, GailIteration, GailOutcome, LabeledPair, PairSource,
};

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::envs::{Action, Env, NavGridEnv};
use crate::error::{check_dim, Error, Result};
use crate::nn::{Optimizer, OptimizerKind};
use crate::policy::{env_action, Agent, HeadKind, Policy};

/// Deterministic action source queried per state.
pub trait Expert {
    fn act(&self, state: &[f64]) -> Result<Action>;
}

impl Expert for NavGridEnv {
    fn act(&self, state: &[f64]) -> Result<Action> {
        Ok(Action::Discrete(self.expert_action(state)?))
    }
}

/// A trained agent acting greedily.
#[derive(Debug, Clone)]
pub struct PolicyExpert<P>(pub Agent<P>);

impl<P: Policy> Expert for PolicyExpert<P> {
    fn act(&self, state: &[f64]) -> Result<Action> {
        self.0.greedy(state)
    }
}

/// Answers from a recorded dataset; states are matched bit-exactly.
#[derive(Debug, Clone, Default)]
pub struct RecordedExpert {
    table: HashMap<Vec<u64>, Action>,
}

fn state_key(state: &[f64]) -> Vec<u64> {
    state.iter().map(|x| x.to_bits()).collect()
}

impl RecordedExpert {
    /// Fails if the recording labels one state with two different actions.
    pub fn new(dataset: &DemonstrationDataset) -> Result<Self> {
        let mut table = HashMap::new();
        for pair in dataset.flatten() {
            if let Some(prev) = table.insert(state_key(&pair.state), pair.action.clone()) {
                if prev != pair.action {
                    return Err(Error::InvalidSpec(format!(
                        "recording is not deterministic: trajectory {} step {} relabels a state",
                        pair.trajectory, pair.step
                    )));
                }
            }
        }
        Ok(RecordedExpert { table })
    }
}

impl Expert for RecordedExpert {
    fn act(&self, state: &[f64]) -> Result<Action> {
        self.table
            .get(&state_key(state))
            .cloned()
            .ok_or_else(|| Error::Contract("state was never demonstrated".into()))
    }
}

/// `−ln π(a|s)` for categorical heads, `‖a − μ‖²` for Gaussian heads; with
/// the gradient with respect to the head.
pub fn bc_loss(kind: HeadKind, z: &[f64], action: &Action) -> Result<(f64, Vec<f64>)> {
    match (kind, action) {
        (HeadKind::Categorical { .. }, Action::Discrete(_)) => {
            let (lp, d) = kind.log_prob(z, action)?;
            Ok((-lp, d.into_iter().map(|g| -g).collect()))
        }
        (HeadKind::Gaussian { dim }, Action::Continuous(a)) => {
            check_dim(kind.width(), z.len())?;
            check_dim(dim, a.len())?;
            let mut grad = vec![0.0; z.len()];
            let mut loss = 0.0;
            for i in 0..dim {
                let d = z[i] - a[i];
                loss += d * d;
                grad[i] = 2.0 * d;
            }
            Ok((loss, grad))
        }
        _ => Err(Error::invalid("action type does not match the policy head")),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcConfig {
    pub alpha: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
}

impl Default for BcConfig {
    fn default() -> Self {
        BcConfig {
            alpha: 1e-2,
            batch_size: 32,
            epochs: 100,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl BcConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            errs.push(format!("alpha must be positive, got {}", self.alpha));
        }
        if self.batch_size == 0 {
            errs.push("batch size must be positive".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }
}

#[derive(Debug, Clone)]
pub struct BcOutcome<P> {
    pub policy: P,
    /// Mean pair loss seen during each epoch.
    pub losses: Vec<f64>,
}

/// Shuffled mini-batch descent on the mean [`bc_loss`] over the flattened
/// dataset. The last batch of an epoch may be short.
pub fn bc_train<P: Policy, R: Rng + ?Sized>(
    dataset: &DemonstrationDataset,
    mut policy: P,
    config: &BcConfig,
    rng: &mut R,
) -> Result<BcOutcome<P>> {
    config.validate()?;
    let pairs = dataset.flatten();
    if pairs.is_empty() {
        return Err(Error::invalid("behavioral cloning needs a non-empty dataset"));
    }
    let kind = policy.head_kind();
    let mut opt = Optimizer::new(config.optimizer, policy.num_params(), 0.0);
    let mut grad = vec![0.0; policy.num_params()];
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            grad.fill(0.0);
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let (z, cache) = policy.forward(&pairs[i].state)?;
                let (loss, mut dz) = bc_loss(kind, &z, &pairs[i].action)?;
                total += loss;
                dz.iter_mut().for_each(|d| *d *= scale);
                policy.backward_into(&cache, &dz, &mut grad)?;
            }
            if !grad.iter().all(|g| g.is_finite()) {
                return Err(Error::NonFinite(format!("behavioral cloning gradient in epoch {epoch}")));
            }
            opt.step(policy.params_mut(), &grad, config.alpha)?;
        }
        losses.push(total / pairs.len() as f64);
    }
    Ok(BcOutcome { policy, losses })
}

/// Fraction of pairs whose greedy policy action equals the recorded one.
pub fn action_agreement<P: Policy>(policy: &P, pairs: &[DemoPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for p in pairs {
        if policy.greedy(&p.state)? == p.action {
            hits += 1;
        }
    }
    Ok(hits as f64 / pairs.len() as f64)
}

/// One recorded trajectory of `T + 1` steps (fewer if the episode ends),
/// acting with `pick` and labelling every state with the expert.
fn labelled_episode<E: Env + ?Sized, X: Expert + ?Sized>(
    env: &mut E,
    expert: &X,
    horizon: usize,
    id: u64,
    seed: u64,
    mut pick: impl FnMut(&[f64], &Action) -> Result<Action>,
) -> Result<(Trajectory, f64)> {
    let mut state = env.reset(seed);
    let mut traj = Trajectory {
        id,
        states: Vec::new(),
        actions: Vec::new(),
    };
    let mut total = 0.0;
    for _ in 0..=horizon {
        let label = expert.act(&state)?;
        let action = pick(&state, &label)?;
        traj.states.push(state.clone());
        traj.actions.push(label);
        let step = env.step(&env_action(&action))?;
        total += step.reward;
        state = step.state;
        if step.done {
            break;
        }
    }
    Ok((traj, total))
}

/// `episodes` trajectories under full expert control.
pub fn collect_expert_demonstrations<E: Env + ?Sized, X: Expert + ?Sized, R: Rng + ?Sized>(
    env: &mut E,
    expert: &X,
    episodes: usize,
    horizon: usize,
    rng: &mut R,
) -> Result<DemonstrationDataset> {
    let mut ds = DemonstrationDataset::new();
    for i in 0..episodes {
        let (traj, _) = labelled_episode(env, expert, horizon, i as u64, rng.random(), |_, a| Ok(a.clone()))?;
        ds.push(traj)?;
    }
    Ok(ds)
}

/// True with probability `beta`: the expert acts.
pub fn expert_turn<R: Rng + ?Sized>(beta: f64, rng: &mut R) -> bool {
    rng.random::<f64>() < beta
}

#[derive(Debug, Clone, PartialEq)]
pub struct DaggerConfig {
    /// Aggregation rounds `K`.
    pub iterations: usize,
    /// Episodes per round `M`.
    pub episodes: usize,
    /// Episode horizon `T`; episodes hold up to `T + 1` steps.
    pub horizon: usize,
    /// Mixing decay `ζ`, with `β_k = ζ^k`.
    pub zeta: f64,
    pub bc: BcConfig,
    /// Episodes of pure expert control for the initial dataset when none is
    /// supplied.
    pub initial_episodes: usize,
    /// Continue from the previous policy instead of a fresh one each round.
    pub warm_start: bool,
}

impl Default for DaggerConfig {
    fn default() -> Self {
        DaggerConfig {
            iterations: 5,
            episodes: 10,
            horizon: 20,
            zeta: 0.5,
            bc: BcConfig::default(),
            initial_episodes: 10,
            warm_start: false,
        }
    }
}

impl DaggerConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(0.0..1.0).contains(&self.zeta) {
            errs.push(format!("zeta must be in [0, 1), got {}", self.zeta));
        }
        if self.horizon == 0 {
            errs.push("horizon must be positive".into());
        }
        if let Err(Error::Validation(more)) = self.bc.validate() {
            errs.extend(more);
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }

    pub fn beta(&self, k: usize) -> f64 {
        self.zeta.powi(k as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DaggerIteration {
    pub k: usize,
    pub beta: f64,
    pub new_pairs: usize,
    pub total_pairs: usize,
    pub trajectories: usize,
    /// Share of executed actions that came from the expert.
    pub expert_fraction: f64,
    /// Mean episode reward of the round's rollouts; absent for `D′_0`.
    pub mean_return: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct DaggerOutcome<P> {
    pub policy: P,
    /// The initial policy trained on `D′_0` alone.
    pub initial_policy: P,
    /// `D′_K`; `D′_k` is its first `log[k].trajectories` trajectories.
    pub dataset: DemonstrationDataset,
    /// Entry 0 describes `D′_0`.
    pub log: Vec<DaggerIteration>,
}

impl<P> DaggerOutcome<P> {
    pub fn dataset_at(&self, k: usize) -> DemonstrationDataset {
        self.dataset.prefix(self.log[k].trajectories)
    }
}

/// DAgger: train on expert data, then for `k = 1..K` roll out the
/// `β_k`-mixture of expert and learner (greedy), label every visited state
/// with the expert, aggregate and retrain. `make_policy` supplies fresh
/// parameters for each retraining.
pub fn dagger_train<E, X, P, F>(
    env: &mut E,
    expert: &X,
    mut make_policy: F,
    initial: Option<DemonstrationDataset>,
    config: &DaggerConfig,
    seed: u64,
) -> Result<DaggerOutcome<P>>
where
    E: Env + ?Sized,
    X: Expert + ?Sized,
    P: Policy,
    F: FnMut(&mut ChaCha8Rng) -> Result<P>,
{
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dataset = match initial {
        Some(d) => d,
        None => collect_expert_demonstrations(env, expert, config.initial_episodes, config.horizon, &mut rng)?,
    };
    let mut log = vec![DaggerIteration {
        k: 0,
        beta: 1.0,
        new_pairs: dataset.num_pairs(),
        total_pairs: dataset.num_pairs(),
        trajectories: dataset.trajectories().len(),
        expert_fraction: 1.0,
        mean_return: None,
    }];
    let fresh = make_policy(&mut rng)?;
    let mut policy = bc_train(&dataset, fresh, &config.bc, &mut rng)?.policy;
    let initial_policy = policy.clone();
    for k in 1..=config.iterations {
        let beta = config.beta(k);
        let mut new = DemonstrationDataset::new();
        let (mut expert_steps, mut steps, mut total_return) = (0usize, 0usize, 0.0);
        for _ in 0..config.episodes {
            let id = dataset.next_id() + new.trajectories().len() as u64;
            let episode_seed = rng.random();
            let mut turn_rng = ChaCha8Rng::seed_from_u64(rng.random());
            let (traj, ret) = labelled_episode(env, expert, config.horizon, id, episode_seed, |s, label| {
                steps += 1;
                if expert_turn(beta, &mut turn_rng) {
                    expert_steps += 1;
                    Ok(label.clone())
                } else {
                    policy.greedy(s)
                }
            })?;
            new.push(traj)?;
            total_return += ret;
        }
        dataset.extend(&new)?;
        let next = if config.warm_start {
            policy.clone()
        } else {
            make_policy(&mut rng)?
        };
        policy = bc_train(&dataset, next, &config.bc, &mut rng)?.policy;
        log.push(DaggerIteration {
            k,
            beta,
            new_pairs: new.num_pairs(),
            total_pairs: dataset.num_pairs(),
            trajectories: dataset.trajectories().len(),
            expert_fraction: expert_steps as f64 / steps.max(1) as f64,
            mean_return: Some(total_return / config.episodes.max(1) as f64),
        });
    }
    Ok(DaggerOutcome {
        policy,
        initial_policy,
        dataset,
        log,
    })
}
