use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rlab_core::envs::{Action, CartPole, TabularEnv};
use rlab_core::mdp::TabularMdp;
use rlab_core::nn::{Activation, Init};
use rlab_core::policy::{HeadKind, LinearSoftmaxPolicy, MlpPolicy, MlpValueFunction, Policy};
use rlab_core::reinforce::*;
use rlab_core::rollout::EarlyStop;

/// One state, one-step episodes; action 0 pays `r0`, action 1 pays `-r0`.
fn bandit(r0: f64) -> TabularEnv {
    let mdp = TabularMdp::from_records(1, 2, 0.9, [(0, 0, 0, r0, 1.0), (0, 1, 0, -r0, 1.0)], &[]).unwrap();
    TabularEnv::new(mdp, Some(0), 1).unwrap()
}

fn single_update(theta: Vec<f64>, r0: f64, seed: u64) -> (f64, f64) {
    let start = LinearSoftmaxPolicy::from_theta(1, 2, theta).unwrap();
    let cfg = ReinforceConfig { alpha0: 1e-3, horizon: 1, episodes: 1, ..Default::default() };
    let out = reinforce_train(&mut bandit(r0), start.clone(), &cfg, seed).unwrap();
    assert_eq!(out.updates, 1);
    let lp = |p: &LinearSoftmaxPolicy| p.log_prob(&[1.0], &Action::Discrete(0)).unwrap();
    (lp(&start), lp(&out.agent.policy))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Whichever action is sampled, a positive return for action 0 (or a
    // negative one for action 1) moves probability towards action 0.
    #[test]
    fn update_follows_the_sign_of_the_return(a in -2.0f64..2.0, b in -2.0f64..2.0, seed in any::<u64>()) {
        let (before, after) = single_update(vec![a, b], 1.0, seed);
        prop_assert!(after > before);
        let (before, after) = single_update(vec![a, b], -1.0, seed);
        prop_assert!(after < before);
    }
}

#[test]
fn episode_clock_decays_once_per_episode() {
    let cfg = ReinforceConfig {
        alpha0: 0.1,
        tau: 0.5,
        delta_t: 1,
        decay_clock: DecayClock::Episode,
        horizon: 1,
        episodes: 4,
        ..Default::default()
    };
    let out = reinforce_train(&mut bandit(1.0), LinearSoftmaxPolicy::zeros(1, 2), &cfg, 0).unwrap();
    let alphas: Vec<f64> = out.log.iter().map(|l| l.alpha).collect();
    assert_eq!(alphas, vec![0.1, 0.05, 0.025, 0.0125]);
}

#[test]
fn early_stop_ends_training() {
    // Both actions pay 1, so every episode extends the streak.
    let mdp = TabularMdp::from_records(1, 2, 0.9, [(0, 0, 0, 1.0, 1.0), (0, 1, 0, 1.0, 1.0)], &[]).unwrap();
    let cfg = ReinforceConfig {
        horizon: 1,
        episodes: 50,
        early_stop: Some(EarlyStop { reward: 1.0, streak: 3 }),
        ..Default::default()
    };
    let out = reinforce_train(&mut TabularEnv::new(mdp, Some(0), 1).unwrap(), LinearSoftmaxPolicy::zeros(1, 2), &cfg, 0).unwrap();
    assert_eq!(out.solved_at, Some(3));
    assert_eq!(out.log.len(), 3);
    assert!(out.log[2].solved && !out.log[1].solved);
}

#[test]
fn baseline_runs_are_reproducible() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = MlpPolicy::new(4, &[8], Activation::Tanh, HeadKind::Categorical { actions: 2 }, Init::FanInUniform, &mut rng).unwrap();
        let v = MlpValueFunction::new(4, &[8], Activation::Tanh, Init::FanInUniform, &mut rng).unwrap();
        let cfg = BaselineConfig {
            policy: ReinforceConfig { episodes: 20, normalize_states: true, ..Default::default() },
            alpha_w0: 1e-2,
            tau_w: 1.0,
            value_weight_decay: 0.02,
        };
        reinforce_baseline_train(&mut CartPole::new(), p, v, &cfg, 4).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.log, b.log);
    assert_eq!(a.agent.policy.params(), b.agent.policy.params());
    assert_eq!(a.value_fn.unwrap().params(), b.value_fn.unwrap().params());
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = ReinforceConfig { alpha0: 0.0, tau: 1.5, ..Default::default() };
    let err = reinforce_train(&mut bandit(1.0), LinearSoftmaxPolicy::zeros(1, 2), &bad, 0).unwrap_err();
    match err {
        rlab_core::Error::Validation(v) => assert_eq!(v.len(), 2),
        other => panic!("unexpected {other:?}"),
    }
}
