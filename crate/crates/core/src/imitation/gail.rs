//! Adversarial imitation: a state-action discriminator whose confidence
//! becomes the reward of a PPO learner.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::{DemoPair, DemonstrationDataset};
use crate::envs::{Action, ActionSpace, Env};
use crate::error::{check_dim, Error, Result};
use crate::nn::{sigmoid, Activation, ForwardCache, Init, Mlp, Optimizer, OptimizerKind};
use crate::policy::{Agent, MlpValueFunction, Policy};
use crate::ppo::{rollout_mean_return, IterationLog, PpoConfig, PpoTrainer, Rollout};

/// `D_φ(s, a) = σ(f_φ([s, enc(a)]))`; discrete actions are one-hot encoded.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    net: Mlp,
    state_dim: usize,
    space: ActionSpace,
}

fn action_width(space: &ActionSpace) -> usize {
    match space {
        ActionSpace::Discrete(n) => *n,
        ActionSpace::Continuous { dim, .. } => *dim,
    }
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        space: ActionSpace,
        hidden: &[usize],
        activation: Activation,
        init: Init,
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![state_dim + action_width(&space)];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let net = Mlp::with_init(&sizes, activation, Activation::Identity, init, rng)?;
        Ok(Discriminator { net, state_dim, space })
    }

    pub fn from_mlp(net: Mlp, state_dim: usize, space: ActionSpace) -> Result<Self> {
        check_dim(state_dim + action_width(&space), net.input_dim())?;
        check_dim(1, net.output_dim())?;
        Ok(Discriminator { net, state_dim, space })
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

    pub fn encode(&self, state: &[f64], action: &Action) -> Result<Vec<f64>> {
        check_dim(self.state_dim, state.len())?;
        let mut x = state.to_vec();
        match (&self.space, action) {
            (ActionSpace::Discrete(n), Action::Discrete(a)) if a < n => {
                x.extend((0..*n).map(|i| f64::from(u8::from(i == *a))));
            }
            (ActionSpace::Continuous { dim, .. }, Action::Continuous(v)) => {
                check_dim(*dim, v.len())?;
                x.extend_from_slice(v);
            }
            _ => return Err(Error::invalid("action does not fit the discriminator's action space")),
        }
        Ok(x)
    }

    pub fn logit(&self, state: &[f64], action: &Action) -> Result<f64> {
        Ok(self.net.predict(&self.encode(state, action)?)?[0])
    }

    /// Probability that the pair came from the expert.
    pub fn prob(&self, state: &[f64], action: &Action) -> Result<f64> {
        Ok(sigmoid(self.logit(state, action)?))
    }

    fn forward(&self, state: &[f64], action: &Action) -> Result<(f64, ForwardCache)> {
        let (out, cache) = self.net.forward(&self.encode(state, action)?)?;
        Ok((out[0], cache))
    }
}

/// `ln(1 + eˣ)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairSource {
    Expert(usize),
    Learner(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPair {
    pub state: Vec<f64>,
    pub action: Action,
    /// 1 for expert pairs, 0 for learner pairs.
    pub label: f64,
    pub source: PairSource,
}

/// Expert pairs labelled 1 followed by learner pairs labelled 0.
pub fn gail_label_dataset(expert: &[DemoPair], learner: &[DemoPair]) -> Result<Vec<LabeledPair>> {
    if expert.is_empty() || learner.is_empty() {
        return Err(Error::invalid("both expert and learner pairs are required"));
    }
    let tag = |pairs: &[DemoPair], label: f64, src: fn(usize) -> PairSource| {
        pairs
            .iter()
            .enumerate()
            .map(|(i, p)| LabeledPair {
                state: p.state.clone(),
                action: p.action.clone(),
                label,
                source: src(i),
            })
            .collect::<Vec<_>>()
    };
    let mut out = tag(expert, 1.0, PairSource::Expert);
    out.extend(tag(learner, 0.0, PairSource::Learner));
    Ok(out)
}

/// Mean of `−y ln D − (1−y) ln(1−D)` and its gradient, evaluated on the
/// logit so that saturated outputs stay finite.
pub fn gail_discriminator_loss(batch: &[LabeledPair], disc: &Discriminator) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty discriminator batch"));
    }
    let inv = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; disc.num_params()];
    for item in batch {
        if item.label != 0.0 && item.label != 1.0 {
            return Err(Error::invalid(format!("label must be 0 or 1, got {}", item.label)));
        }
        let (l, cache) = disc.forward(&item.state, &item.action)?;
        loss += inv * (item.label * softplus(-l) + (1.0 - item.label) * softplus(l));
        disc.net.backward_into(&cache, &[inv * (sigmoid(l) - item.label)], &mut grad)?;
    }
    Ok((loss, grad))
}

/// `−ln(1 − D(s, a))`, computed as `softplus(logit)`.
pub fn gail_reward(disc: &Discriminator, state: &[f64], action: &Action) -> Result<f64> {
    Ok(softplus(disc.logit(state, action)?))
}

/// Fraction of items classified on the right side of 0.5.
pub fn discriminator_accuracy(disc: &Discriminator, items: &[LabeledPair]) -> Result<f64> {
    if items.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for it in items {
        let expert = disc.logit(&it.state, &it.action)? > 0.0;
        if expert == (it.label == 1.0) {
            hits += 1;
        }
    }
    Ok(hits as f64 / items.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GailConfig {
    /// Outer iterations `K`.
    pub iterations: usize,
    /// Discriminator epochs `E` per iteration.
    pub disc_epochs: usize,
    /// Discriminator mini-batch size `B`.
    pub disc_batch: usize,
    pub disc_alpha: f64,
    pub disc_optimizer: OptimizerKind,
    /// Learner pairs per iteration are `ppo.rollouts × ppo.horizon`; the
    /// policy phase runs `ppo.epochs` epochs.
    pub ppo: PpoConfig,
    /// Expert trajectories kept out of discriminator training for the
    /// held-out accuracy.
    pub holdout_trajectories: usize,
}

impl Default for GailConfig {
    fn default() -> Self {
        GailConfig {
            iterations: 50,
            disc_epochs: 2,
            disc_batch: 128,
            disc_alpha: 3e-4,
            disc_optimizer: OptimizerKind::Adam,
            ppo: PpoConfig::default(),
            holdout_trajectories: 1,
        }
    }
}

impl GailConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.disc_batch == 0 {
            errs.push("discriminator batch must be positive".into());
        }
        if !(self.disc_alpha > 0.0 && self.disc_alpha.is_finite()) {
            errs.push(format!("discriminator alpha must be positive, got {}", self.disc_alpha));
        }
        if let Err(Error::Validation(more)) = self.ppo.validate() {
            errs.extend(more);
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GailIteration {
    pub k: usize,
    /// Accuracy on the training set after the discriminator phase.
    pub train_accuracy: f64,
    /// Balanced accuracy before the discriminator phase on held-out expert
    /// pairs and the freshly collected learner pairs.
    pub holdout_accuracy: f64,
    pub mean_gail_reward: f64,
    /// True environment return; logged, never used for learning.
    pub mean_true_return: f64,
    pub ppo: IterationLog,
}

#[derive(Debug, Clone)]
pub struct GailOutcome<P> {
    pub agent: Agent<P>,
    pub value_fn: MlpValueFunction,
    pub discriminator: Discriminator,
    pub log: Vec<GailIteration>,
}

fn learner_pairs(rollouts: &[Rollout]) -> Vec<DemoPair> {
    rollouts
        .iter()
        .enumerate()
        .flat_map(|(n, r)| {
            r.states.iter().zip(&r.actions).enumerate().map(move |(t, (s, a))| DemoPair {
                trajectory: n as u64,
                step: t,
                state: s.clone(),
                action: a.clone(),
            })
        })
        .collect()
}

fn balanced_accuracy(disc: &Discriminator, expert: &[DemoPair], learner: &[DemoPair]) -> Result<f64> {
    let side = |pairs: &[DemoPair], want_expert: bool| -> Result<f64> {
        if pairs.is_empty() {
            return Ok(0.0);
        }
        let mut hits = 0usize;
        for p in pairs {
            if (disc.logit(&p.state, &p.action)? > 0.0) == want_expert {
                hits += 1;
            }
        }
        Ok(hits as f64 / pairs.len() as f64)
    };
    Ok(0.5 * (side(expert, true)? + side(learner, false)?))
}

pub fn gail_train<E: Env + ?Sized, P: Policy>(
    env: &mut E,
    expert: &DemonstrationDataset,
    policy: P,
    value_fn: MlpValueFunction,
    mut disc: Discriminator,
    config: &GailConfig,
    seed: u64,
) -> Result<GailOutcome<P>> {
    config.validate()?;
    let n_traj = expert.trajectories().len();
    if n_traj <= config.holdout_trajectories {
        return Err(Error::invalid(format!(
            "{n_traj} expert trajectories leave none for training after holding out {}",
            config.holdout_trajectories
        )));
    }
    let train_expert = expert.prefix(n_traj - config.holdout_trajectories).flatten();
    let held_expert: Vec<DemoPair> = expert.flatten().split_off(train_expert.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trainer = PpoTrainer::new(policy, value_fn, config.ppo.clone(), rng.random())?;
    let mut opt = Optimizer::new(config.disc_optimizer, disc.num_params(), 0.0);
    let mut log = Vec::with_capacity(config.iterations);
    for k in 1..=config.iterations {
        let rollouts = trainer.collect(env)?;
        let learner = learner_pairs(&rollouts);
        let holdout_accuracy = balanced_accuracy(&disc, &held_expert, &learner)?;
        let mut labeled = gail_label_dataset(&train_expert, &learner)?;
        for _ in 0..config.disc_epochs {
            labeled.shuffle(&mut rng);
            for batch in labeled.chunks(config.disc_batch) {
                let (_, grad) = gail_discriminator_loss(batch, &disc)?;
                if !grad.iter().all(|g| g.is_finite()) {
                    return Err(Error::NonFinite(format!("discriminator gradient in iteration {k}")));
                }
                opt.step(disc.params_mut(), &grad, config.disc_alpha)?;
            }
        }
        let train_accuracy = discriminator_accuracy(&disc, &labeled)?;
        let rewards = rollouts
            .iter()
            .map(|r| {
                r.states
                    .iter()
                    .zip(&r.actions)
                    .map(|(s, a)| gail_reward(&disc, s, a))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let count = rewards.iter().map(Vec::len).sum::<usize>().max(1);
        let mean_gail_reward = rewards.iter().flatten().sum::<f64>() / count as f64;
        let ppo = trainer.update(&rollouts, Some(&rewards))?;
        log.push(GailIteration {
            k,
            train_accuracy,
            holdout_accuracy,
            mean_gail_reward,
            mean_true_return: rollout_mean_return(&rollouts),
            ppo,
        });
    }
    Ok(GailOutcome {
        agent: Agent::new(trainer.policy, None),
        value_fn: trainer.value_fn,
        discriminator: disc,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(state: Vec<f64>, a: usize) -> DemoPair {
        DemoPair {
            trajectory: 0,
            step: 0,
            state,
            action: Action::Discrete(a),
        }
    }

    #[test]
    fn labels_and_counts() {
        let e: Vec<DemoPair> = (0..3).map(|i| pair(vec![i as f64], 0)).collect();
        let l: Vec<DemoPair> = (0..5).map(|i| pair(vec![-(i as f64)], 1)).collect();
        let set = gail_label_dataset(&e, &l).unwrap();
        assert_eq!(set.len(), 8);
        assert_eq!(set.iter().filter(|p| p.label == 1.0).count(), 3);
        for p in &set {
            match p.source {
                PairSource::Expert(i) => assert_eq!(p.state, e[i].state),
                PairSource::Learner(i) => assert_eq!(p.state, l[i].state),
            }
        }
        assert!(gail_label_dataset(&e, &[]).is_err());
    }

    #[test]
    fn half_probability_discriminator() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = Discriminator::new(2, ActionSpace::Discrete(3), &[4], Activation::Tanh, Init::Zeros, &mut rng).unwrap();
        let e = vec![pair(vec![0.1, 0.2], 0)];
        let l = vec![pair(vec![0.3, 0.4], 2)];
        let (loss, _) = gail_discriminator_loss(&gail_label_dataset(&e, &l).unwrap(), &d).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-12);
        assert!((gail_reward(&d, &[0.0, 0.0], &Action::Discrete(1)).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert_eq!(d.encode(&[0.5, 0.5], &Action::Discrete(1)).unwrap(), vec![0.5, 0.5, 0.0, 1.0, 0.0]);
        assert!(d.encode(&[0.5, 0.5], &Action::Discrete(3)).is_err());
    }

    #[test]
    fn reward_shape() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        let r = |p: f64| softplus((p / (1.0 - p)).ln());
        assert!((r(0.9) - 10f64.ln()).abs() < 1e-12);
        assert!(r(0.9) > r(0.6));
        assert!(softplus(-800.0) >= 0.0 && softplus(-800.0) < 1e-300);
        assert!(softplus(800.0).is_finite());
    }
}
