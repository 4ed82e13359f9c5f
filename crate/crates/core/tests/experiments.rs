use std::fs;
use std::path::Path;

use rlab_core::envs::{Action, Env, GridWorldSpec, NavAction};
use rlab_core::error::Error;
use rlab_core::experiments::teleop::{replay_dataset, TeleopMode, TeleopSession};
use rlab_core::experiments::{
    agent_checkpoint, agent_from_checkpoint, emit_plot_data, evaluate_agent, run, run_seed, AnyPolicy, EnvInstance,
    ExperimentConfig, MetricTable, CHECKPOINT_FILE, METRICS_FILE, SUMMARY_FILE,
};
use rlab_core::imitation::{bc_train, BcConfig, DemonstrationDataset};
use rlab_core::mdp::{iterative_policy_evaluation, SolverOptions, TabularPolicy};
use rlab_core::nn::{Activation, Checkpoint, Init};
use rlab_core::policy::{Agent, HeadKind, MlpPolicy};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const MAP: &str = "S....\n.#.#.\n.#...\n...#.\n.#..G\n";

fn config(dir: &Path, text: &str) -> ExperimentConfig {
    fs::write(dir.join("nav.txt"), MAP).unwrap();
    ExperimentConfig::from_text(text, dir).unwrap()
}

fn validation(text: &str) -> Vec<String> {
    match ExperimentConfig::from_text(text, Path::new(".")) {
        Err(Error::Validation(v)) => v,
        other => panic!("expected a validation error, got {other:?}"),
    }
}

#[test]
fn every_violation_is_reported() {
    let errs = validation(
        r#"
[experiment]
algorithm = "ppo"
colour = "red"

[env]
kind = "cartpole"
horizon = 0

[policy]
activation = "swish"

[params]
clip_epsilon = -1.0
minibatch = "large"

[extras]
"#,
    );
    for field in ["experiment.colour", "env.horizon", "policy.activation", "params.minibatch", "clip", "[extras]"] {
        assert!(errs.iter().any(|e| e.contains(field)), "no error mentions {field}: {errs:#?}");
    }
    assert!(errs.len() >= 6);
}

#[test]
fn unknown_algorithm_tag() {
    let errs = validation("[experiment]\nalgorithm = \"sarsa\"\n[env]\nkind = \"cartpole\"\n");
    assert_eq!(errs.len(), 1);
    assert!(errs[0].contains("sarsa") && errs[0].contains("policy-eval"));
    assert!(validation("[env]\nkind = \"cartpole\"\n").iter().any(|e| e.contains("experiment.algorithm")));
}

#[test]
fn parameters_are_checked_against_the_algorithm() {
    let errs = validation("[experiment]\nalgorithm = \"bc\"\n[env]\nkind = \"cartpole\"\n[params]\nclip_epsilon = 0.2\n");
    assert!(errs.iter().any(|e| e.contains("params.clip_epsilon: unknown key")));
    assert!(errs.iter().any(|e| e.contains("oracle")), "{errs:?}");
    let errs = validation("[experiment]\nalgorithm = \"value-iter\"\n[env]\nkind = \"cartpole\"\n");
    assert!(errs.iter().any(|e| e.contains("tabular")));
}

#[test]
fn toml_syntax_errors_carry_a_line() {
    match ExperimentConfig::from_text("[experiment]\nalgorithm = \n", Path::new(".")) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
}

#[test]
fn policy_evaluation_matches_the_solver() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "[experiment]\nalgorithm = \"policy-eval\"\n[env]\nkind = \"gridworld\"\npreset = \"open\"\n[params]\npsi = 1e-4\n",
    );
    let rec = run_seed(&cfg, 0, dir.path()).unwrap();

    let mdp = rlab_core::envs::gridworld_to_mdp(&GridWorldSpec::open(5, 5), 0.9).unwrap();
    let direct = iterative_policy_evaluation(&mdp, &TabularPolicy::uniform(25, 4), &SolverOptions::new(1e-4)).unwrap();
    assert_eq!(rec.metrics.columns, ["sweep", "delta"]);
    assert_eq!(rec.metrics.column("delta").unwrap(), direct.deltas);
    assert!((66..=82).contains(&rec.metrics.rows.len()));

    let table = fs::read_to_string(dir.path().join("values.csv")).unwrap();
    let values: Vec<f64> = table.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(values, direct.values.values);
    let ck = Checkpoint::load(&dir.path().join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(ck.vector("values").unwrap(), &direct.values.values[..]);
}

#[test]
fn wind_line_selects_the_evaluated_policy() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("wind.txt"), "wind = 0.25 0.25 0.15 0.35\n.....\n.....\n.....\n.....\n.....\n").unwrap();
    let cfg = ExperimentConfig::from_text(
        "[experiment]\nalgorithm = \"policy-eval\"\n[env]\nkind = \"gridworld\"\nmap = \"wind.txt\"\n[params]\npsi = 1e-4\n",
        dir.path(),
    )
    .unwrap();
    let rec = run_seed(&cfg, 0, &dir.path().join("out")).unwrap();
    let mdp = rlab_core::envs::gridworld_to_mdp(&GridWorldSpec::open(5, 5), 0.9).unwrap();
    let wind = TabularPolicy::state_independent(25, &[0.25, 0.25, 0.15, 0.35]).unwrap();
    let direct = iterative_policy_evaluation(&mdp, &wind, &SolverOptions::new(1e-4)).unwrap();
    assert_eq!(rec.metrics.column("delta").unwrap(), direct.deltas);
}

fn tiny_configs() -> Vec<(&'static str, String)> {
    let nav = "[env]\nkind = \"navgrid\"\nmap = \"nav.txt\"\nhorizon = 20\n[policy]\nhidden = [16]\ninit = \"fan-in\"\n";
    let nav_expert = "[expert]\nkind = \"oracle\"\nepisodes = 4\nhorizon = 20\n";
    vec![
        ("policy-eval", "[env]\nkind = \"gridworld\"\n".into()),
        ("value-iter", "[env]\nkind = \"two-state\"\n".into()),
        ("reinforce", "[env]\nkind = \"cartpole\"\n[policy]\nkind = \"linear\"\n[params]\nepisodes = 30\n".into()),
        (
            "reinforce-baseline",
            "[env]\nkind = \"cartpole\"\n[policy]\nhidden = [8]\n[value]\nhidden = [8]\n[params]\nepisodes = 20\n".into(),
        ),
        (
            "ppo",
            "[env]\nkind = \"cartpole\"\n[policy]\nhidden = [8]\n[value]\nhidden = [8]\n[params]\niterations = 2\nhorizon = 128\nminibatch = 32\nepochs = 2\n"
                .into(),
        ),
        ("bc", format!("{nav}{nav_expert}[params]\nepochs = 5\n")),
        ("dagger", format!("{nav}{nav_expert}[params]\niterations = 2\nepisodes = 3\nepochs = 5\n")),
        (
            "gail",
            format!(
                "{nav}{nav_expert}[discriminator]\nhidden = [8]\n[value]\nhidden = [8]\n[params]\niterations = 2\nhorizon = 64\nminibatch = 32\nepochs = 2\n"
            ),
        ),
    ]
}

#[test]
fn identical_inputs_give_identical_metric_files() {
    let dir = tempfile::tempdir().unwrap();
    for (tag, body) in tiny_configs() {
        let text = format!("[experiment]\nalgorithm = \"{tag}\"\nseeds = [3]\n[eval]\nepisodes = 3\n{body}");
        let cfg = config(dir.path(), &text);
        let a = run_seed(&cfg, 3, &dir.path().join(format!("{tag}-a"))).unwrap();
        let b = run_seed(&cfg, 3, &dir.path().join(format!("{tag}-b"))).unwrap();
        let read = |d: &Path| fs::read(d.join(METRICS_FILE)).unwrap();
        assert!(!a.metrics.rows.is_empty(), "{tag}");
        assert_eq!(read(&a.dir), read(&b.dir), "{tag}: metrics differ");
        assert_eq!(
            fs::read(a.dir.join(CHECKPOINT_FILE)).unwrap(),
            fs::read(b.dir.join(CHECKPOINT_FILE)).unwrap(),
            "{tag}: checkpoints differ"
        );
        assert_eq!(a.input_hash, b.input_hash);
        assert_ne!(a.input_hash, cfg.input_hash(4));
    }
}

#[test]
fn summary_and_seed_directories() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "[experiment]\nalgorithm = \"value-iter\"\nseeds = [0, 1]\noutput = \"out\"\n[env]\nkind = \"two-state\"\n",
    );
    let recs = run(&cfg).unwrap();
    assert_eq!(recs.len(), 2);
    for (r, seed) in recs.iter().zip([0, 1]) {
        assert_eq!(r.dir, dir.path().join("out").join(format!("seed-{seed}")));
        let summary = fs::read_to_string(r.dir.join(SUMMARY_FILE)).unwrap();
        assert!(summary.starts_with("name = value-iter\nalgorithm = value-iter\n"));
        assert!(summary.trim_end().lines().last().unwrap().starts_with("wall_time_s = "));
        assert_eq!(fs::read_to_string(r.dir.join("config.toml")).unwrap(), cfg.source);
    }
    let ck = Checkpoint::load(&recs[0].dir.join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(ck.vector("greedy").unwrap(), &[0.0, 1.0]);
    let v = ck.vector("values").unwrap();
    assert!((v[1] - 10.0).abs() < 1e-3 && (v[0] - 8.7805).abs() < 1e-3);
}

#[test]
fn acceptance_threshold_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "[experiment]\nalgorithm = \"bc\"\n[env]\nkind = \"navgrid\"\nmap = \"nav.txt\"\n[expert]\nepisodes = 5\n[params]\nepochs = 60\n[acceptance]\nmin_eval_return = 2.0\n",
    );
    let rec = run_seed(&cfg, 0, dir.path()).unwrap();
    assert_eq!(rec.passed, Some(false), "navgrid returns are at most 1");
    assert!(fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap().contains("passed = false"));
}

#[test]
fn checkpoints_reload_to_identical_greedy_actions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "[experiment]\nalgorithm = \"ppo\"\n[env]\nkind = \"cartpole\"\n[policy]\nhidden = [16]\n[value]\nhidden = [16]\n[params]\niterations = 3\nhorizon = 256\nminibatch = 64\nepochs = 3\n[eval]\nepisodes = 5\n",
    );
    let rec = run_seed(&cfg, 9, dir.path()).unwrap();
    let ck = Checkpoint::load(&dir.path().join(CHECKPOINT_FILE)).unwrap();
    let agent = agent_from_checkpoint(&ck).unwrap();
    let returns = evaluate_agent(&cfg, &agent, 5, cfg.eval.seed).unwrap();
    assert_eq!(returns.iter().sum::<f64>() / 5.0, rec.eval_return.unwrap());

    let again = agent_from_checkpoint(&Checkpoint::from_bytes(&agent_checkpoint(&agent, None).to_bytes()).unwrap()).unwrap();
    let mut env = cfg.env.build().unwrap();
    for seed in 0..50 {
        let s = env.reset(seed);
        assert_eq!(agent.greedy(&s).unwrap(), again.greedy(&s).unwrap());
    }
}

#[test]
fn linear_and_normalized_agents_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "[experiment]\nalgorithm = \"reinforce\"\n[env]\nkind = \"cartpole\"\n[policy]\nkind = \"linear\"\n[params]\nepisodes = 40\nnormalize_states = true\n[eval]\nepisodes = 0\n",
    );
    run_seed(&cfg, 2, dir.path()).unwrap();
    let ck = Checkpoint::load(&dir.path().join(CHECKPOINT_FILE)).unwrap();
    let agent = agent_from_checkpoint(&ck).unwrap();
    assert!(matches!(agent.policy, AnyPolicy::Linear(_)));
    assert!(agent.normalizer.is_some());
    let copy = agent_from_checkpoint(&agent_checkpoint(&agent, None)).unwrap();
    assert_eq!(copy, agent);
}

#[test]
fn plot_data_from_run_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "[experiment]\nalgorithm = \"reinforce\"\n[env]\nkind = \"cartpole\"\n[policy]\nkind = \"linear\"\n[params]\nepisodes = 12\n[eval]\nepisodes = 0\n",
    );
    run_seed(&cfg, 0, dir.path()).unwrap();
    let metrics = MetricTable::load(dir.path().join(METRICS_FILE)).unwrap();
    let out = emit_plot_data(&metrics, "reward", 3).unwrap();
    let rows: Vec<Vec<f64>> = out.lines().skip(1).map(|l| l.split(',').map(|c| c.parse().unwrap()).collect()).collect();
    let raw = metrics.column("reward").unwrap();
    assert_eq!(rows.len(), raw.len());
    for (i, r) in rows.iter().enumerate().skip(1).take(raw.len() - 2) {
        assert_eq!(r[1], raw[i]);
        assert!((r[2] - (raw[i - 1] + raw[i] + raw[i + 1]) / 3.0).abs() < 1e-12);
    }
    assert!(emit_plot_data(&metrics, "reward", 13).is_err());
}

fn navgrid() -> EnvInstance {
    let grid = rlab_core::envs::NavGrid::from_text(MAP).unwrap();
    EnvInstance::NavGrid(rlab_core::envs::NavGridEnv::new(grid, rlab_core::envs::NavEncoding::Coordinates, 40).unwrap())
}

fn act(a: NavAction) -> Action {
    Action::Discrete(a.index())
}

#[test]
fn demonstrate_session_records_every_keypress() {
    let mut session = TeleopSession::new("s1", navgrid(), TeleopMode::Demonstrate, None, 1.0, 0).unwrap();
    let before = session.env().as_navgrid().unwrap().agent();
    let sub = session.submit(act(NavAction::Right)).unwrap();
    let after = session.env().as_navgrid().unwrap().agent();
    assert_eq!(after, (before.0, before.1 + 1));
    assert_eq!(sub.observation.step, 1);
    assert!(sub.observation.proposed.is_none());

    let keys = [NavAction::Down, NavAction::Left, NavAction::Stay, NavAction::Up, NavAction::Right];
    for i in 0..19 {
        session.submit(act(keys[i % keys.len()])).unwrap();
    }
    assert_eq!(session.num_pairs(), 20);
    let (labels, executed) = session.finish().unwrap();
    assert_eq!(labels, executed);
    assert_eq!(labels.num_pairs(), 20);

    let reloaded = DemonstrationDataset::from_text(&labels.to_text()).unwrap();
    assert_eq!(replay_dataset(&mut navgrid(), &reloaded).unwrap(), 19);
}

#[test]
fn finished_episodes_reject_actions() {
    let grid = rlab_core::envs::NavGrid::from_text("S.G\n").unwrap();
    let env = EnvInstance::NavGrid(rlab_core::envs::NavGridEnv::new(grid, rlab_core::envs::NavEncoding::OneHot, 10).unwrap());
    let mut session = TeleopSession::new("s", env, TeleopMode::Demonstrate, None, 1.0, 0).unwrap();
    session.submit(act(NavAction::Right)).unwrap();
    assert!(session.submit(act(NavAction::Right)).unwrap().observation.done);
    assert!(matches!(session.submit(act(NavAction::Left)), Err(Error::Contract(_))));
    assert!(session.submit(Action::Discrete(9)).is_err());
    let obs = session.reset().unwrap();
    assert!(!obs.done && obs.step == 0 && obs.episode == 1);
    session.submit(act(NavAction::Right)).unwrap();
    let (labels, _) = session.finish().unwrap();
    assert_eq!(labels.trajectories().len(), 2);
    assert_eq!(labels.num_pairs(), 3);
}

fn learner() -> Agent<AnyPolicy> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = MlpPolicy::new(2, &[8], Activation::Tanh, HeadKind::Categorical { actions: 5 }, Init::FanInUniform, &mut rng).unwrap();
    Agent::new(AnyPolicy::Mlp(p), None)
}

#[test]
fn correction_session_stores_the_human_labels() {
    let clicks: Vec<usize> = (0..15).map(|i| (i * 7 + 2) % 5).collect();
    let mut session = TeleopSession::new("c", navgrid(), TeleopMode::Correct, Some(learner()), 0.5, 4).unwrap();
    let mut executed_by_learner = 0;
    for &c in &clicks {
        let proposed = session.observation().unwrap().proposed.expect("learner proposal");
        let sub = session.submit(Action::Discrete(c)).unwrap();
        assert_eq!(sub.label, Action::Discrete(c));
        if sub.executed != sub.label {
            assert_eq!(sub.executed, proposed);
            executed_by_learner += 1;
        }
    }
    let (labels, executed) = session.finish().unwrap();
    let log: Vec<Action> = labels.flatten().into_iter().map(|p| p.action).collect();
    assert_eq!(log, clicks.iter().map(|&c| Action::Discrete(c)).collect::<Vec<_>>());
    assert!(executed_by_learner > 0);
    assert_eq!(replay_dataset(&mut navgrid(), &executed).unwrap(), clicks.len() - 1);

    let states = |d: &DemonstrationDataset| d.flatten().into_iter().map(|p| p.state).collect::<Vec<_>>();
    assert_eq!(states(&labels), states(&executed));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = bc_train(&labels, learner().policy, &BcConfig { epochs: 3, ..BcConfig::default() }, &mut rng).unwrap();
    assert_eq!(out.losses.len(), 3);
}

#[test]
fn correction_needs_a_learner() {
    assert!(TeleopSession::new("x", navgrid(), TeleopMode::Correct, None, 0.5, 0).is_err());
    assert!(TeleopSession::new("x", navgrid(), TeleopMode::Demonstrate, None, 1.5, 0).is_err());
    assert_eq!(TeleopMode::from_name(TeleopMode::Correct.name()), Some(TeleopMode::Correct));
}

#[test]
fn tampered_datasets_fail_replay() {
    let mut session = TeleopSession::new("t", navgrid(), TeleopMode::Demonstrate, None, 1.0, 0).unwrap();
    for _ in 0..4 {
        session.submit(act(NavAction::Right)).unwrap();
    }
    let (labels, _) = session.finish().unwrap();
    // Rewrite the first action as "up" from the top row: the agent stays put
    // instead of moving, so the next recorded state no longer follows.
    let text = labels.to_text().replacen(" d:3\n", " d:0\n", 1);
    let tampered = DemonstrationDataset::from_text(&text).unwrap();
    assert_ne!(tampered, labels);
    assert!(matches!(replay_dataset(&mut navgrid(), &tampered), Err(Error::Contract(_))));
}
