use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rlab_core::envs::{Action, CartPole};
use rlab_core::nn::{Activation, Init};
use rlab_core::policy::{HeadKind, MlpPolicy, MlpValueFunction, Policy};
use rlab_core::ppo::*;

fn policy(seed: u64, kind: HeadKind) -> MlpPolicy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    MlpPolicy::new(3, &[6], Activation::Tanh, kind, Init::FanInUniform, &mut rng).unwrap()
}

fn tuple(p: &MlpPolicy, state: Vec<f64>, action: Action, advantage: f64, log_ratio: f64) -> ExperienceTuple {
    let old_head = p.head(&state).unwrap();
    let lp = p.log_prob(&state, &action).unwrap();
    ExperienceTuple {
        rollout: 0,
        step: 0,
        state,
        action,
        reward: 0.0,
        ret: 0.0,
        advantage,
        normalized_advantage: Some(advantage),
        // A shifted old log-probability fixes the ratio at exp(log_ratio).
        old_log_prob: lp - log_ratio,
        old_head,
    }
}

fn mean_entropy(p: &MlpPolicy, batch: &[ExperienceTuple]) -> f64 {
    let kind = p.head_kind();
    batch.iter().map(|t| kind.entropy(&p.head(&t.state).unwrap()).unwrap().0).sum::<f64>() / batch.len() as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn entropy_bonus_raises_entropy(seed in any::<u64>(), gaussian in any::<bool>(), s in prop::collection::vec(-1.0f64..1.0, 3)) {
        let kind = if gaussian { HeadKind::Gaussian { dim: 2 } } else { HeadKind::Categorical { actions: 3 } };
        let p = policy(seed, kind);
        let action = if gaussian { Action::Continuous(vec![0.1, -0.2]) } else { Action::Discrete(1) };
        // Zero advantages leave only the entropy term.
        let batch = vec![tuple(&p, s, action, 0.0, 0.0)];
        let cfg = PpoConfig { eta: 0.5, ..PpoConfig::default() };
        let g = ppo_policy_loss(&batch, &p, &cfg).unwrap().grad;
        let mut stepped = p.clone();
        for (w, d) in stepped.params_mut().iter_mut().zip(&g) {
            *w -= 1e-3 * d;
        }
        let norm: f64 = g.iter().map(|x| x * x).sum();
        prop_assume!(norm > 1e-12);
        prop_assert!(mean_entropy(&stepped, &batch) > mean_entropy(&p, &batch));
        let plain = ppo_policy_loss(&batch, &p, &PpoConfig::default()).unwrap().grad;
        prop_assert!(plain.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn clipped_branch_has_no_gradient(seed in any::<u64>(), adv in 0.1f64..3.0, excess in 0.01f64..1.0) {
        let p = policy(seed, HeadKind::Categorical { actions: 3 });
        let eps = 0.2;
        // Ratio past 1 + ε with a positive advantage, and below 1 − ε with a negative one.
        let up = tuple(&p, vec![0.3, -0.1, 0.5], Action::Discrete(0), adv, (1.0 + eps + excess).ln());
        let down = tuple(&p, vec![0.3, -0.1, 0.5], Action::Discrete(2), -adv, (1.0 - eps - excess.min(0.7)).ln());
        let cfg = PpoConfig { clip_epsilon: eps, ..PpoConfig::default() };
        for t in [up, down] {
            let loss = ppo_policy_loss(std::slice::from_ref(&t), &p, &cfg).unwrap();
            prop_assert!(loss.grad.iter().all(|&x| x == 0.0));
            prop_assert_eq!(loss.clip_fraction, 1.0);
        }
    }
}

#[test]
fn kl_penalty_vanishes_at_the_old_policy() {
    let p = policy(1, HeadKind::Categorical { actions: 3 });
    let batch: Vec<_> = (0..4).map(|i| tuple(&p, vec![i as f64 * 0.1, 0.2, -0.3], Action::Discrete(i % 3), 1.0, 0.0)).collect();
    let cfg = PpoConfig { nu: 0.0, beta: 3.0, ..PpoConfig::default() };
    let loss = ppo_policy_loss(&batch, &p, &cfg).unwrap();
    assert!(loss.mean_kl.abs() < 1e-15);
    assert!((loss.loss + 1.0).abs() < 1e-12, "ratio 1 and unit advantages give loss -1");
    assert!(batch_kl(&batch, &p).unwrap().abs() < 1e-15);
}

#[test]
fn trainer_runs_are_reproducible() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = MlpPolicy::new(4, &[8], Activation::Tanh, HeadKind::Categorical { actions: 2 }, Init::FanInUniform, &mut rng).unwrap();
        let v = MlpValueFunction::new(4, &[8], Activation::Tanh, Init::FanInUniform, &mut rng).unwrap();
        let cfg = PpoConfig { iterations: 2, rollouts: 2, horizon: 64, minibatch: 16, epochs: 2, ..PpoConfig::default() };
        ppo_train(&mut CartPole::new(), p, v, &cfg, 8).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.log, b.log);
    assert_eq!(a.steps, 256);
    assert_eq!(a.agent.policy.params(), b.agent.policy.params());
}
