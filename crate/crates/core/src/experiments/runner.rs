use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::envs::{ActionSpace, Env};
use crate::error::{Error, Result};
use crate::imitation::{
    action_agreement, bc_train, collect_expert_demonstrations, dagger_train, gail_train, DemonstrationDataset,
    Discriminator, Expert, PolicyExpert, RecordedExpert,
};
use crate::mdp::{iterative_policy_evaluation, value_iteration, SolverOptions, TabularMdp, TabularPolicy};
use crate::nn::{Checkpoint, Mlp};
use crate::policy::{Agent, HeadKind, MlpValueFunction};
use crate::ppo::ppo_train;
use crate::reinforce::{reinforce_baseline_train, reinforce_train, EpisodeLog};
use crate::rollout::{evaluate_greedy, mean};

use super::agent::{agent_checkpoint, agent_from_checkpoint, AnyPolicy};
use super::config::{AlgorithmParams, ExperimentConfig, ExpertSource, NetSpec, TabularParams};
use super::envs::EnvInstance;
use super::metrics::MetricTable;

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub name: String,
    pub algorithm: String,
    pub seed: u64,
    pub input_hash: String,
    pub dir: PathBuf,
    pub metrics: MetricTable,
    pub checkpoint: Option<PathBuf>,
    /// Ordered `key = value` facts written to the summary file.
    pub summary: Vec<(String, String)>,
    /// Mean return of the greedy evaluation episodes.
    pub eval_return: Option<f64>,
    /// Outcome of the configured acceptance threshold, if any.
    pub passed: Option<bool>,
    pub wall_time: Duration,
}

pub fn head_for(space: &ActionSpace) -> HeadKind {
    match space {
        ActionSpace::Discrete(n) => HeadKind::Categorical { actions: *n },
        ActionSpace::Continuous { dim, .. } => HeadKind::Gaussian { dim: *dim },
    }
}

fn value_net(spec: &NetSpec, dim: usize, rng: &mut ChaCha8Rng) -> Result<MlpValueFunction> {
    MlpValueFunction::new(dim, &spec.hidden, spec.activation, spec.init, rng)
}

fn episode_table(log: &[EpisodeLog]) -> MetricTable {
    let mut t = MetricTable::new(&["episode", "reward", "alpha", "solved"]);
    for e in log {
        t.push(vec![e.episode as f64, e.reward, e.alpha, f64::from(u8::from(e.solved))]);
    }
    t
}

/// What one algorithm run produced before files are written.
struct Trained {
    metrics: MetricTable,
    checkpoint: Checkpoint,
    agent: Option<Agent<AnyPolicy>>,
    summary: Vec<(String, String)>,
    extra_files: Vec<(&'static str, String)>,
}

fn tabular(mdp: &TabularMdp, p: &TabularParams, control: bool) -> Result<Trained> {
    let options = SolverOptions::new(p.psi).with_mode(p.mode).with_max_sweeps(p.max_sweeps);
    let (values, deltas, greedy) = if control {
        let vi = value_iteration(mdp, &options)?;
        let greedy: Vec<usize> = (0..mdp.num_states()).map(|s| vi.policy.action(s)).collect();
        (vi.values, vi.deltas, Some(greedy))
    } else {
        let policy = match &p.action_probs {
            Some(probs) => TabularPolicy::state_independent(mdp.num_states(), probs)?,
            None => TabularPolicy::uniform(mdp.num_states(), mdp.num_actions()),
        };
        let pe = iterative_policy_evaluation(mdp, &policy, &options)?;
        (pe.values, pe.deltas, None)
    };
    let mut metrics = MetricTable::new(&["sweep", "delta"]);
    for (k, d) in deltas.iter().enumerate() {
        metrics.push(vec![(k + 1) as f64, *d]);
    }
    let v: Vec<f64> = (0..values.len()).map(|s| values.get(s)).collect();
    let mut table = String::from(if greedy.is_some() { "state,value,action\n" } else { "state,value\n" });
    for (s, x) in v.iter().enumerate() {
        match &greedy {
            Some(g) => writeln!(table, "{s},{x},{}", g[s]),
            None => writeln!(table, "{s},{x}"),
        }
        .expect("writing to a String");
    }
    let mut checkpoint = Checkpoint::new();
    checkpoint.push_vector("values", &v);
    if let Some(g) = &greedy {
        checkpoint.push_vector("greedy", &g.iter().map(|&a| a as f64).collect::<Vec<_>>());
    }
    Ok(Trained {
        metrics,
        checkpoint,
        agent: None,
        summary: vec![("sweeps".into(), deltas.len().to_string())],
        extra_files: vec![("values.csv", table)],
    })
}

fn demonstrations(
    config: &ExperimentConfig,
    env: &mut EnvInstance,
    rng: &mut ChaCha8Rng,
) -> Result<(DemonstrationDataset, Box<dyn Expert>)> {
    let spec = config
        .expert
        .as_ref()
        .ok_or_else(|| Error::invalid(format!("{} needs an [expert] section", config.algorithm)))?;
    let expert: Box<dyn Expert> = match &spec.source {
        ExpertSource::Oracle => Box::new(
            env.as_navgrid()
                .cloned()
                .ok_or_else(|| Error::invalid("the oracle expert exists only for navgrid"))?,
        ),
        ExpertSource::Checkpoint(path) => Box::new(PolicyExpert(agent_from_checkpoint(&Checkpoint::load(path)?)?)),
        ExpertSource::Demos(path) => {
            let ds = DemonstrationDataset::load(path)?;
            let expert = RecordedExpert::new(&ds)?;
            return Ok((ds, Box::new(expert)));
        }
    };
    let ds = collect_expert_demonstrations(env, expert.as_ref(), spec.episodes, spec.horizon, rng)?;
    Ok((ds, expert))
}

fn train(config: &ExperimentConfig, seed: u64) -> Result<Trained> {
    if let (Some(mdp), AlgorithmParams::PolicyEval(p) | AlgorithmParams::ValueIter(p)) =
        (config.env.tabular_model(), &config.params)
    {
        return tabular(mdp, p, matches!(config.params, AlgorithmParams::ValueIter(_)));
    }
    let mut env = config.env.build()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = env.state_dim();
    let head = head_for(&env.action_space());
    let policy = AnyPolicy::build(&config.policy, dim, head, &mut rng)?;
    let mut summary = Vec::new();
    let mut extra_files = Vec::new();
    let (metrics, agent, value, disc): (MetricTable, Agent<AnyPolicy>, Option<MlpValueFunction>, Option<Mlp>) =
        match &config.params {
            AlgorithmParams::PolicyEval(_) | AlgorithmParams::ValueIter(_) => {
                return Err(Error::invalid(format!("{} needs a tabular environment", config.algorithm)))
            }
            AlgorithmParams::Reinforce(c) => {
                let out = reinforce_train(&mut env, policy, c, seed)?;
                summary.push(("episodes".into(), out.log.len().to_string()));
                summary.push(("solved_at".into(), out.solved_at.map_or("none".into(), |e| e.to_string())));
                (episode_table(&out.log), out.agent, None, None)
            }
            AlgorithmParams::ReinforceBaseline(c) => {
                let v = value_net(&config.value, dim, &mut rng)?;
                let out = reinforce_baseline_train(&mut env, policy, v, c, seed)?;
                summary.push(("episodes".into(), out.log.len().to_string()));
                summary.push(("solved_at".into(), out.solved_at.map_or("none".into(), |e| e.to_string())));
                (episode_table(&out.log), out.agent, out.value_fn, None)
            }
            AlgorithmParams::Ppo(c) => {
                let v = value_net(&config.value, dim, &mut rng)?;
                let out = ppo_train(&mut env, policy, v, c, seed)?;
                let mut t = MetricTable::new(&["iteration", "steps", "mean_return", "mean_kl", "epochs_ran", "clip_fraction"]);
                for l in &out.log {
                    t.push(vec![
                        l.iteration as f64,
                        l.steps as f64,
                        l.mean_return,
                        l.mean_kl,
                        l.epochs_ran as f64,
                        l.clip_fraction,
                    ]);
                }
                summary.push(("steps".into(), out.steps.to_string()));
                summary.push((
                    "reached_target_at".into(),
                    out.reached_target_at.map_or("none".into(), |i| i.to_string()),
                ));
                (t, out.agent, Some(out.value_fn), None)
            }
            AlgorithmParams::Bc(c) => {
                let (ds, _) = demonstrations(config, &mut env, &mut rng)?;
                let out = bc_train(&ds, policy, c, &mut rng)?;
                let mut t = MetricTable::new(&["epoch", "loss"]);
                for (i, l) in out.losses.iter().enumerate() {
                    t.push(vec![(i + 1) as f64, *l]);
                }
                summary.push(("pairs".into(), ds.num_pairs().to_string()));
                summary.push(("agreement".into(), action_agreement(&out.policy, &ds.flatten())?.to_string()));
                extra_files.push(("dataset.txt", ds.to_text()));
                (t, Agent::new(out.policy, None), None, None)
            }
            AlgorithmParams::Dagger(c) => {
                let (d0, expert) = demonstrations(config, &mut env, &mut rng)?;
                let spec = config.policy.clone();
                let out = dagger_train(
                    &mut env,
                    expert.as_ref(),
                    |r| AnyPolicy::build(&spec, dim, head, r),
                    Some(d0),
                    c,
                    seed,
                )?;
                let mut t = MetricTable::new(&["iteration", "beta", "new_pairs", "total_pairs", "expert_fraction", "mean_return"]);
                for l in &out.log {
                    t.push(vec![
                        l.k as f64,
                        l.beta,
                        l.new_pairs as f64,
                        l.total_pairs as f64,
                        l.expert_fraction,
                        l.mean_return.unwrap_or(f64::NAN),
                    ]);
                }
                summary.push(("pairs".into(), out.dataset.num_pairs().to_string()));
                extra_files.push(("dataset.txt", out.dataset.to_text()));
                (t, Agent::new(out.policy, None), None, None)
            }
            AlgorithmParams::Gail(c) => {
                let (ds, _) = demonstrations(config, &mut env, &mut rng)?;
                let v = value_net(&config.value, dim, &mut rng)?;
                let d = &config.discriminator;
                let disc = Discriminator::new(dim, env.action_space(), &d.hidden, d.activation, d.init, &mut rng)?;
                let out = gail_train(&mut env, &ds, policy, v, disc, c, seed)?;
                let mut t = MetricTable::new(&[
                    "iteration",
                    "train_accuracy",
                    "holdout_accuracy",
                    "mean_gail_reward",
                    "mean_true_return",
                ]);
                for l in &out.log {
                    t.push(vec![l.k as f64, l.train_accuracy, l.holdout_accuracy, l.mean_gail_reward, l.mean_true_return]);
                }
                summary.push(("expert_pairs".into(), ds.num_pairs().to_string()));
                extra_files.push(("dataset.txt", ds.to_text()));
                (t, out.agent, Some(out.value_fn), Some(out.discriminator.net().clone()))
            }
        };
    let mut checkpoint = agent_checkpoint(&agent, value.as_ref());
    if let Some(d) = &disc {
        checkpoint.push_mlp("discriminator", d);
    }
    Ok(Trained {
        metrics,
        checkpoint,
        agent: Some(agent),
        summary,
        extra_files,
    })
}

/// Greedy evaluation protocol: `episodes` episodes capped at the env horizon,
/// seeded from `seed`.
pub fn evaluate_agent(config: &ExperimentConfig, agent: &Agent<AnyPolicy>, episodes: usize, seed: u64) -> Result<Vec<f64>> {
    let mut env = config.env.build()?;
    evaluate_greedy(&mut env, agent, episodes, config.env.horizon(), seed)
}

/// Runs one seed and writes its files under `dir`.
pub fn run_seed(config: &ExperimentConfig, seed: u64, dir: &Path) -> Result<RunRecord> {
    let start = Instant::now();
    let trained = train(config, seed)?;
    let eval_return = match &trained.agent {
        Some(agent) if config.eval.episodes > 0 => Some(mean(&evaluate_agent(config, agent, config.eval.episodes, config.eval.seed)?)),
        _ => None,
    };
    let passed = config.min_eval_return.map(|min| eval_return.is_some_and(|r| r >= min));
    let wall_time = start.elapsed();

    fs::create_dir_all(dir)?;
    fs::write(dir.join(CONFIG_FILE), &config.source)?;
    fs::write(dir.join(METRICS_FILE), trained.metrics.to_csv())?;
    let checkpoint = dir.join(CHECKPOINT_FILE);
    trained.checkpoint.save(&checkpoint)?;
    for (name, text) in &trained.extra_files {
        fs::write(dir.join(name), text)?;
    }
    let input_hash = config.input_hash(seed);
    let mut summary = vec![
        ("name".to_string(), config.name.clone()),
        ("algorithm".into(), config.algorithm.tag().into()),
        ("seed".into(), seed.to_string()),
        ("input_hash".into(), input_hash.clone()),
    ];
    summary.extend(trained.summary);
    if let Some(r) = eval_return {
        summary.push(("eval_episodes".into(), config.eval.episodes.to_string()));
        summary.push(("eval_return".into(), r.to_string()));
    }
    if let (Some(min), Some(ok)) = (config.min_eval_return, passed) {
        summary.push(("min_eval_return".into(), min.to_string()));
        summary.push(("passed".into(), ok.to_string()));
    }
    let mut text = String::new();
    for (k, v) in &summary {
        writeln!(text, "{k} = {v}").expect("writing to a String");
    }
    writeln!(text, "wall_time_s = {:.3}", wall_time.as_secs_f64()).expect("writing to a String");
    fs::write(dir.join(SUMMARY_FILE), text)?;
    Ok(RunRecord {
        name: config.name.clone(),
        algorithm: config.algorithm.tag().into(),
        seed,
        input_hash,
        dir: dir.to_path_buf(),
        metrics: trained.metrics,
        checkpoint: Some(checkpoint),
        summary,
        eval_return,
        passed,
        wall_time,
    })
}

/// Runs every configured seed into `<output>/seed-<n>`.
pub fn run(config: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    config
        .seeds
        .iter()
        .map(|&seed| run_seed(config, seed, &config.output.join(format!("seed-{seed}"))))
        .collect()
}
