//! Experiment configuration files.
//!
//! Configs are TOML: `key = value` lines grouped under `[section]` headers.
//! Every key is optional unless marked; unknown keys are errors.
//!
//! ```toml
//! [experiment]
//! algorithm = "ppo"        # required: policy-eval value-iter reinforce
//!                          # reinforce-baseline ppo bc dagger gail
//! seeds = [0, 1, 2]        # default [0]
//! output = "runs/ppo"      # default "runs/<name>", relative to the config
//! name = "ppo-cartpole"    # default: the algorithm tag
//!
//! [env]
//! kind = "cartpole"        # required: cartpole cartpole-continuous
//!                          # two-state gridworld navgrid mdp
//! horizon = 500            # episode step cap
//! gamma = 0.9              # discount for two-state and gridworld models
//! map = "maps/nav.txt"     # gridworld / navgrid map file
//! preset = "two-jumps"     # gridworld without a map: two-jumps | open
//! mdp = "models/m.txt"     # mdp transition file
//! start = 0                # fixed start state for tabular envs
//! encoding = "one-hot"     # navgrid: one-hot | coordinates
//!
//! [policy]                 # and [value], [discriminator]
//! kind = "mlp"             # mlp | linear (policy only)
//! hidden = [64, 64]
//! activation = "tanh"
//! init = "orthogonal"      # orthogonal | fan-in | zeros
//! hidden_gain = 1.4142135623730951
//! output_gain = 0.01
//! log_std = -0.5           # Gaussian heads only
//!
//! [params]                 # hyperparameters of the chosen algorithm
//!
//! [expert]                 # bc, dagger, gail
//! kind = "oracle"          # oracle (navgrid) | checkpoint | demos
//! path = "expert.ckpt"
//! episodes = 10
//! horizon = 20
//!
//! [eval]
//! episodes = 30
//! seed = 1000003
//!
//! [acceptance]
//! min_eval_return = 475.0  # run fails if the greedy evaluation is lower
//! ```
//!
//! Relative paths resolve against the config file's directory.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use toml::{Table, Value};

use crate::envs::{
    gridworld_to_mdp, two_state_mdp, CartPole, GridWorldSpec, NavEncoding, NavGrid, NavGridEnv, TabularEnv,
    CARTPOLE_MAX_STEPS,
};
use crate::error::{Error, Result};
use crate::imitation::{BcConfig, DaggerConfig, GailConfig};
use crate::mdp::{SweepMode, TabularMdp};
use crate::nn::{Activation, Init, OptimizerKind};
use crate::ppo::{EvalStop, PpoConfig};
use crate::reinforce::{BaselineConfig, DecayClock, ReinforceConfig};
use crate::rollout::EarlyStop;

use super::envs::EnvInstance;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    PolicyEval,
    ValueIter,
    Reinforce,
    ReinforceBaseline,
    Ppo,
    Bc,
    Dagger,
    Gail,
}

impl Algorithm {
    pub const ALL: [Algorithm; 8] = [
        Algorithm::PolicyEval,
        Algorithm::ValueIter,
        Algorithm::Reinforce,
        Algorithm::ReinforceBaseline,
        Algorithm::Ppo,
        Algorithm::Bc,
        Algorithm::Dagger,
        Algorithm::Gail,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Algorithm::PolicyEval => "policy-eval",
            Algorithm::ValueIter => "value-iter",
            Algorithm::Reinforce => "reinforce",
            Algorithm::ReinforceBaseline => "reinforce-baseline",
            Algorithm::Ppo => "ppo",
            Algorithm::Bc => "bc",
            Algorithm::Dagger => "dagger",
            Algorithm::Gail => "gail",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.tag() == tag)
    }

    pub fn is_tabular(self) -> bool {
        matches!(self, Algorithm::PolicyEval | Algorithm::ValueIter)
    }

    pub fn needs_expert(self) -> bool {
        matches!(self, Algorithm::Bc | Algorithm::Dagger | Algorithm::Gail)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnvSpec {
    CartPole { max_steps: usize, continuous: bool },
    Tabular { mdp: TabularMdp, start: Option<usize>, horizon: usize },
    NavGrid { grid: NavGrid, encoding: NavEncoding, horizon: usize },
}

impl EnvSpec {
    pub fn build(&self) -> Result<EnvInstance> {
        Ok(match self {
            EnvSpec::CartPole { max_steps, continuous } => {
                let env = if *continuous { CartPole::continuous() } else { CartPole::new() };
                EnvInstance::CartPole(env.with_max_steps(*max_steps))
            }
            EnvSpec::Tabular { mdp, start, horizon } => {
                EnvInstance::Tabular(TabularEnv::new(mdp.clone(), *start, *horizon)?)
            }
            EnvSpec::NavGrid { grid, encoding, horizon } => {
                EnvInstance::NavGrid(NavGridEnv::new(grid.clone(), *encoding, *horizon)?)
            }
        })
    }

    pub fn horizon(&self) -> usize {
        match self {
            EnvSpec::CartPole { max_steps, .. } => *max_steps,
            EnvSpec::Tabular { horizon, .. } | EnvSpec::NavGrid { horizon, .. } => *horizon,
        }
    }

    pub fn tabular_model(&self) -> Option<&TabularMdp> {
        match self {
            EnvSpec::Tabular { mdp, .. } => Some(mdp),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Mlp,
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetSpec {
    pub kind: PolicyKind,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub init: Init,
    pub log_std: Option<f64>,
}

impl NetSpec {
    fn defaults(output_gain: f64) -> Self {
        NetSpec {
            kind: PolicyKind::Mlp,
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            init: Init::Orthogonal {
                hidden_gain: std::f64::consts::SQRT_2,
                output_gain,
            },
            log_std: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularParams {
    pub psi: f64,
    pub max_sweeps: usize,
    pub mode: SweepMode,
    /// Fixed action distribution for policy evaluation; uniform if absent
    /// (a grid's `wind` line also supplies one).
    pub action_probs: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AlgorithmParams {
    PolicyEval(TabularParams),
    ValueIter(TabularParams),
    Reinforce(ReinforceConfig),
    ReinforceBaseline(BaselineConfig),
    Ppo(PpoConfig),
    Bc(BcConfig),
    Dagger(DaggerConfig),
    Gail(GailConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExpertSource {
    /// Breadth-first oracle of a navigation grid.
    Oracle,
    /// Greedy policy from an agent checkpoint.
    Checkpoint(PathBuf),
    /// A recorded dataset, also used as the lookup expert for DAgger.
    Demos(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertSpec {
    pub source: ExpertSource,
    /// Demonstration episodes collected from oracle or checkpoint experts.
    pub episodes: usize,
    /// Step cap for collected demonstrations; each holds up to `horizon + 1`
    /// pairs.
    pub horizon: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSpec {
    pub episodes: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub algorithm: Algorithm,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    pub env: EnvSpec,
    pub policy: NetSpec,
    pub value: NetSpec,
    pub discriminator: NetSpec,
    pub params: AlgorithmParams,
    pub expert: Option<ExpertSpec>,
    pub eval: EvalSpec,
    pub min_eval_return: Option<f64>,
    /// The file text, kept for run snapshots and hashing.
    pub source: String,
    /// Contents of every file the config references, by resolved path.
    pub inputs: BTreeMap<PathBuf, Vec<u8>>,
}

/// Collects violations while typed values are pulled out of one section.
struct Section {
    name: &'static str,
    table: Table,
}

impl Section {
    fn take(root: &mut Table, name: &'static str, errs: &mut Vec<String>) -> Self {
        let table = match root.remove(name) {
            None => Table::new(),
            Some(Value::Table(t)) => t,
            Some(_) => {
                errs.push(format!("[{name}] must be a section"));
                Table::new()
            }
        };
        Section { name, table }
    }

    fn get<T>(&mut self, key: &str, errs: &mut Vec<String>, what: &str, conv: impl Fn(&Value) -> Option<T>) -> Option<T> {
        let v = self.table.remove(key)?;
        let out = conv(&v);
        if out.is_none() {
            errs.push(format!("{}.{key}: expected {what}, found `{v}`", self.name));
        }
        out
    }

    fn f64(&mut self, key: &str, default: f64, errs: &mut Vec<String>) -> f64 {
        self.opt_f64(key, errs).unwrap_or(default)
    }

    fn opt_f64(&mut self, key: &str, errs: &mut Vec<String>) -> Option<f64> {
        self.get(key, errs, "a number", as_f64)
    }

    fn usize(&mut self, key: &str, default: usize, errs: &mut Vec<String>) -> usize {
        self.opt_usize(key, errs).unwrap_or(default)
    }

    fn opt_usize(&mut self, key: &str, errs: &mut Vec<String>) -> Option<usize> {
        self.get(key, errs, "a non-negative integer", |v| v.as_integer().and_then(|i| usize::try_from(i).ok()))
    }

    fn u64(&mut self, key: &str, default: u64, errs: &mut Vec<String>) -> u64 {
        self.get(key, errs, "a non-negative integer", |v| v.as_integer().and_then(|i| u64::try_from(i).ok()))
            .unwrap_or(default)
    }

    fn bool(&mut self, key: &str, default: bool, errs: &mut Vec<String>) -> bool {
        self.get(key, errs, "true or false", Value::as_bool).unwrap_or(default)
    }

    fn string(&mut self, key: &str, errs: &mut Vec<String>) -> Option<String> {
        self.get(key, errs, "a string", |v| v.as_str().map(str::to_string))
    }

    fn choice<T>(&mut self, key: &str, default: T, errs: &mut Vec<String>, options: &str, parse: impl Fn(&str) -> Option<T>) -> T {
        match self.string(key, errs) {
            None => default,
            Some(s) => parse(&s).unwrap_or_else(|| {
                errs.push(format!("{}.{key}: unknown value `{s}` (expected one of {options})", self.name));
                default
            }),
        }
    }

    fn list<T>(&mut self, key: &str, errs: &mut Vec<String>, what: &str, item: impl Fn(&Value) -> Option<T>) -> Option<Vec<T>> {
        self.get(key, errs, what, |v| v.as_array()?.iter().map(&item).collect())
    }

    fn finish(self, errs: &mut Vec<String>) {
        for key in self.table.keys() {
            errs.push(format!("{}.{key}: unknown key", self.name));
        }
    }
}

fn as_f64(v: &Value) -> Option<f64> {
    v.as_float().or_else(|| v.as_integer().map(|i| i as f64))
}

fn read_input(base: &Path, rel: &str, inputs: &mut BTreeMap<PathBuf, Vec<u8>>, errs: &mut Vec<String>, key: &str) -> Option<String> {
    let path = base.join(rel);
    match std::fs::read(&path) {
        Ok(bytes) => {
            let text = String::from_utf8_lossy(&bytes).into_owned();
            inputs.insert(path, bytes);
            Some(text)
        }
        Err(e) => {
            errs.push(format!("{key}: cannot read {}: {e}", path.display()));
            None
        }
    }
}

fn net_section(root: &mut Table, name: &'static str, defaults: NetSpec, errs: &mut Vec<String>) -> NetSpec {
    let mut s = Section::take(root, name, errs);
    let kind = if name == "policy" {
        s.choice("kind", PolicyKind::Mlp, errs, "mlp, linear", |k| match k {
            "mlp" => Some(PolicyKind::Mlp),
            "linear" => Some(PolicyKind::Linear),
            _ => None,
        })
    } else {
        PolicyKind::Mlp
    };
    let hidden = s
        .list("hidden", errs, "a list of layer widths", |v| {
            v.as_integer().and_then(|i| usize::try_from(i).ok()).filter(|&w| w > 0)
        })
        .unwrap_or(defaults.hidden);
    let activation = s.choice("activation", defaults.activation, errs, "relu, tanh, sigmoid, identity", Activation::from_name);
    let (dh, dout) = match defaults.init {
        Init::Orthogonal { hidden_gain, output_gain } => (hidden_gain, output_gain),
        _ => (std::f64::consts::SQRT_2, 1.0),
    };
    let hidden_gain = s.f64("hidden_gain", dh, errs);
    let output_gain = s.f64("output_gain", dout, errs);
    let init = s.choice("init", "orthogonal", errs, "orthogonal, fan-in, zeros", |k| {
        ["orthogonal", "fan-in", "zeros"].into_iter().find(|o| *o == k)
    });
    let init = match init {
        "fan-in" => Init::FanInUniform,
        "zeros" => Init::Zeros,
        _ => Init::Orthogonal { hidden_gain, output_gain },
    };
    let log_std = if name == "policy" { s.opt_f64("log_std", errs) } else { None };
    s.finish(errs);
    NetSpec {
        kind,
        hidden,
        activation,
        init,
        log_std,
    }
}

fn env_section(
    root: &mut Table,
    base: &Path,
    inputs: &mut BTreeMap<PathBuf, Vec<u8>>,
    wind: &mut Option<[f64; 4]>,
    errs: &mut Vec<String>,
) -> Option<EnvSpec> {
    let mut s = Section::take(root, "env", errs);
    let kind = s.string("kind", errs);
    let spec = match kind.as_deref() {
        None => {
            errs.push("env.kind: required".into());
            None
        }
        Some(k @ ("cartpole" | "cartpole-continuous")) => Some(EnvSpec::CartPole {
            max_steps: s.usize("horizon", CARTPOLE_MAX_STEPS, errs),
            continuous: k == "cartpole-continuous",
        }),
        Some("two-state") => {
            let gamma = s.f64("gamma", 0.9, errs);
            let horizon = s.usize("horizon", 100, errs);
            let start = Some(s.usize("start", crate::envs::STATE_A, errs));
            two_state_mdp(gamma)
                .map_err(|e| errs.push(format!("env: {e}")))
                .ok()
                .map(|mdp| EnvSpec::Tabular { mdp, start, horizon })
        }
        Some("gridworld") => {
            let gamma = s.f64("gamma", 0.9, errs);
            let horizon = s.usize("horizon", 100, errs);
            let start = s.opt_usize("start", errs);
            let grid = match (s.string("map", errs), s.string("preset", errs)) {
                (Some(_), Some(_)) => {
                    errs.push("env: give either map or preset, not both".into());
                    None
                }
                (Some(map), None) => read_input(base, &map, inputs, errs, "env.map")
                    .and_then(|t| GridWorldSpec::from_text(&t).map_err(|e| errs.push(format!("env.map: {e}"))).ok()),
                (None, p) => match p.as_deref().unwrap_or("two-jumps") {
                    "two-jumps" => Some(GridWorldSpec::with_two_jumps()),
                    "open" => Some(GridWorldSpec::open(5, 5)),
                    other => {
                        errs.push(format!("env.preset: unknown grid `{other}` (expected two-jumps, open)"));
                        None
                    }
                },
            };
            *wind = grid.as_ref().and_then(|g| g.action_distribution);
            grid.and_then(|g| gridworld_to_mdp(&g, gamma).map_err(|e| errs.push(format!("env: {e}"))).ok())
                .map(|mdp| EnvSpec::Tabular { mdp, start, horizon })
        }
        Some("mdp") => {
            let horizon = s.usize("horizon", 100, errs);
            let start = s.opt_usize("start", errs);
            match s.string("mdp", errs) {
                None => {
                    errs.push("env.mdp: required for kind = \"mdp\"".into());
                    None
                }
                Some(path) => read_input(base, &path, inputs, errs, "env.mdp")
                    .and_then(|t| TabularMdp::from_text(&t).map_err(|e| errs.push(format!("env.mdp: {e}"))).ok())
                    .map(|mdp| EnvSpec::Tabular { mdp, start, horizon }),
            }
        }
        Some("navgrid") => {
            let horizon = s.usize("horizon", 20, errs);
            let encoding = s.choice("encoding", NavEncoding::OneHot, errs, "one-hot, coordinates", NavEncoding::from_name);
            match s.string("map", errs) {
                None => {
                    errs.push("env.map: required for kind = \"navgrid\"".into());
                    None
                }
                Some(map) => read_input(base, &map, inputs, errs, "env.map")
                    .and_then(|t| NavGrid::from_text(&t).map_err(|e| errs.push(format!("env.map: {e}"))).ok())
                    .map(|grid| EnvSpec::NavGrid { grid, encoding, horizon }),
            }
        }
        Some(other) => {
            errs.push(format!(
                "env.kind: unknown environment `{other}` (expected cartpole, cartpole-continuous, two-state, gridworld, navgrid, mdp)"
            ));
            None
        }
    };
    if let Some(spec) = &spec {
        if spec.horizon() == 0 {
            errs.push("env.horizon: must be positive".into());
        }
    }
    s.finish(errs);
    spec
}

fn optimizer(s: &mut Section, key: &str, default: OptimizerKind, errs: &mut Vec<String>) -> OptimizerKind {
    s.choice(key, default, errs, "sgd, adam", OptimizerKind::from_name)
}

fn reinforce_params(s: &mut Section, errs: &mut Vec<String>) -> ReinforceConfig {
    let d = ReinforceConfig::default();
    let streak = s.opt_usize("early_stop_streak", errs);
    let reward = s.opt_f64("early_stop_reward", errs);
    ReinforceConfig {
        alpha0: s.f64("alpha0", d.alpha0, errs),
        tau: s.f64("tau", d.tau, errs),
        delta_t: s.u64("delta_t", d.delta_t, errs),
        staircase: s.bool("staircase", d.staircase, errs),
        decay_clock: s.choice("decay_clock", d.decay_clock, errs, "update, episode", |k| match k {
            "update" => Some(DecayClock::Update),
            "episode" => Some(DecayClock::Episode),
            _ => None,
        }),
        gamma: s.f64("gamma", d.gamma, errs),
        horizon: s.usize("horizon", d.horizon, errs),
        episodes: s.usize("episodes", d.episodes, errs),
        discount_updates: s.bool("discount_updates", d.discount_updates, errs),
        optimizer: optimizer(s, "optimizer", d.optimizer, errs),
        weight_decay: s.f64("weight_decay", d.weight_decay, errs),
        normalize_states: s.bool("normalize_states", d.normalize_states, errs),
        early_stop: match (streak, reward) {
            (None, None) => None,
            (streak, reward) => {
                let e = EarlyStop::cartpole();
                Some(EarlyStop {
                    streak: streak.unwrap_or(e.streak),
                    reward: reward.unwrap_or(e.reward),
                })
            }
        },
    }
}

fn ppo_params(s: &mut Section, errs: &mut Vec<String>) -> PpoConfig {
    let d = PpoConfig::default();
    let eval = s.opt_f64("eval_target", errs).map(|target| EvalStop {
        every: s.usize("eval_every", 1, errs),
        episodes: s.usize("eval_episodes", 10, errs),
        horizon: s.usize("eval_horizon", 500, errs),
        target,
    });
    PpoConfig {
        alpha_pi: s.f64("alpha_pi", d.alpha_pi, errs),
        alpha_w: s.f64("alpha_w", d.alpha_w, errs),
        iterations: s.usize("iterations", d.iterations, errs),
        epochs: s.usize("epochs", d.epochs, errs),
        rollouts: s.usize("rollouts", d.rollouts, errs),
        horizon: s.usize("horizon", d.horizon, errs),
        minibatch: s.usize("minibatch", d.minibatch, errs),
        gamma: s.f64("gamma", d.gamma, errs),
        lambda: s.f64("lambda", d.lambda, errs),
        gae_depth: s.opt_usize("gae_depth", errs),
        kl_threshold: s.f64("kl_threshold", d.kl_threshold, errs),
        nu: s.f64("nu", d.nu, errs),
        clip_epsilon: s.f64("clip_epsilon", d.clip_epsilon, errs),
        beta: s.f64("beta", d.beta, errs),
        eta: s.f64("eta", d.eta, errs),
        optimizer: optimizer(s, "optimizer", d.optimizer, errs),
        eval,
    }
}

fn bc_params(s: &mut Section, prefix: &str, errs: &mut Vec<String>) -> BcConfig {
    let d = BcConfig::default();
    let k = |name: &str| format!("{prefix}{name}");
    BcConfig {
        alpha: s.f64(&k("alpha"), d.alpha, errs),
        batch_size: s.usize(&k("batch_size"), d.batch_size, errs),
        epochs: s.usize(&k("epochs"), d.epochs, errs),
        optimizer: optimizer(s, &k("optimizer"), d.optimizer, errs),
    }
}

fn params_section(root: &mut Table, algorithm: Algorithm, errs: &mut Vec<String>) -> AlgorithmParams {
    let mut s = Section::take(root, "params", errs);
    let tabular = |s: &mut Section, errs: &mut Vec<String>| TabularParams {
        psi: s.f64("psi", 1e-6, errs),
        max_sweeps: s.usize("max_sweeps", 10_000, errs),
        mode: s.choice("sweep", SweepMode::Synchronous, errs, "synchronous, in-place", |k| match k {
            "synchronous" => Some(SweepMode::Synchronous),
            "in-place" => Some(SweepMode::InPlace),
            _ => None,
        }),
        action_probs: s.list("action_probs", errs, "a list of probabilities", as_f64),
    };
    let params = match algorithm {
        Algorithm::PolicyEval => AlgorithmParams::PolicyEval(tabular(&mut s, errs)),
        Algorithm::ValueIter => AlgorithmParams::ValueIter(tabular(&mut s, errs)),
        Algorithm::Reinforce => AlgorithmParams::Reinforce(reinforce_params(&mut s, errs)),
        Algorithm::ReinforceBaseline => {
            let policy = reinforce_params(&mut s, errs);
            AlgorithmParams::ReinforceBaseline(BaselineConfig {
                alpha_w0: s.f64("alpha_w0", policy.alpha0, errs),
                tau_w: s.f64("tau_w", policy.tau, errs),
                value_weight_decay: s.f64("value_weight_decay", 0.0, errs),
                policy,
            })
        }
        Algorithm::Ppo => AlgorithmParams::Ppo(ppo_params(&mut s, errs)),
        Algorithm::Bc => AlgorithmParams::Bc(bc_params(&mut s, "", errs)),
        Algorithm::Dagger => {
            let d = DaggerConfig::default();
            AlgorithmParams::Dagger(DaggerConfig {
                iterations: s.usize("iterations", d.iterations, errs),
                episodes: s.usize("episodes", d.episodes, errs),
                horizon: s.usize("horizon", d.horizon, errs),
                zeta: s.f64("zeta", d.zeta, errs),
                bc: bc_params(&mut s, "", errs),
                initial_episodes: d.initial_episodes,
                warm_start: s.bool("warm_start", d.warm_start, errs),
            })
        }
        Algorithm::Gail => {
            let d = GailConfig::default();
            let iterations = s.usize("iterations", d.iterations, errs);
            let disc_epochs = s.usize("disc_epochs", d.disc_epochs, errs);
            let disc_batch = s.usize("disc_batch", d.disc_batch, errs);
            let disc_alpha = s.f64("disc_alpha", d.disc_alpha, errs);
            let disc_optimizer = optimizer(&mut s, "disc_optimizer", d.disc_optimizer, errs);
            let holdout_trajectories = s.usize("holdout_trajectories", d.holdout_trajectories, errs);
            let mut ppo = ppo_params(&mut s, errs);
            ppo.iterations = iterations;
            AlgorithmParams::Gail(GailConfig {
                iterations,
                disc_epochs,
                disc_batch,
                disc_alpha,
                disc_optimizer,
                ppo,
                holdout_trajectories,
            })
        }
    };
    s.finish(errs);
    let check = match &params {
        AlgorithmParams::PolicyEval(t) | AlgorithmParams::ValueIter(t) => {
            let mut v = Vec::new();
            if !(t.psi > 0.0) {
                v.push(format!("psi must be positive, got {}", t.psi));
            }
            if v.is_empty() {
                Ok(())
            } else {
                Err(Error::Validation(v))
            }
        }
        AlgorithmParams::Reinforce(c) => c.validate(),
        AlgorithmParams::ReinforceBaseline(c) => c.validate(),
        AlgorithmParams::Ppo(c) => c.validate(),
        AlgorithmParams::Bc(c) => c.validate(),
        AlgorithmParams::Dagger(c) => c.validate(),
        AlgorithmParams::Gail(c) => c.validate(),
    };
    match check {
        Ok(()) => {}
        Err(Error::Validation(v)) => errs.extend(v.into_iter().map(|m| format!("params: {m}"))),
        Err(e) => errs.push(format!("params: {e}")),
    }
    params
}

fn expert_section(
    root: &mut Table,
    algorithm: Algorithm,
    base: &Path,
    inputs: &mut BTreeMap<PathBuf, Vec<u8>>,
    errs: &mut Vec<String>,
) -> Option<ExpertSpec> {
    let present = root.contains_key("expert");
    let mut s = Section::take(root, "expert", errs);
    if !algorithm.needs_expert() {
        if present {
            errs.push(format!("[expert] is not used by {algorithm}"));
        }
        return None;
    }
    let kind = s.string("kind", errs).unwrap_or_else(|| "oracle".into());
    let path = s.string("path", errs);
    let episodes = s.usize("episodes", 10, errs);
    let horizon = s.usize("horizon", 20, errs);
    let source = match (kind.as_str(), path) {
        ("oracle", None) => Some(ExpertSource::Oracle),
        ("oracle", Some(_)) => {
            errs.push("expert.path: not used by the oracle expert".into());
            None
        }
        ("checkpoint" | "demos", None) => {
            errs.push(format!("expert.path: required for kind = \"{kind}\""));
            None
        }
        ("checkpoint", Some(p)) => {
            read_input(base, &p, inputs, errs, "expert.path");
            Some(ExpertSource::Checkpoint(base.join(p)))
        }
        ("demos", Some(p)) => {
            read_input(base, &p, inputs, errs, "expert.path");
            Some(ExpertSource::Demos(base.join(p)))
        }
        (other, _) => {
            errs.push(format!("expert.kind: unknown expert `{other}` (expected oracle, checkpoint, demos)"));
            None
        }
    };
    if episodes == 0 {
        errs.push("expert.episodes: must be positive".into());
    }
    s.finish(errs);
    source.map(|source| ExpertSpec {
        source,
        episodes,
        horizon,
    })
}

impl ExperimentConfig {
    /// Parses and validates a config; every violation is reported at once.
    pub fn from_text(text: &str, base_dir: &Path) -> Result<Self> {
        let mut root: Table = text.parse().map_err(|e: toml::de::Error| {
            let line = e
                .span()
                .map(|sp| text[..sp.start.min(text.len())].lines().count().max(1))
                .unwrap_or(1);
            Error::parse(line, e.message().to_string())
        })?;
        let mut errs = Vec::new();
        let mut inputs = BTreeMap::new();

        let mut exp = Section::take(&mut root, "experiment", &mut errs);
        let algorithm = match exp.string("algorithm", &mut errs) {
            None => {
                errs.push("experiment.algorithm: required".into());
                None
            }
            Some(tag) => Algorithm::from_tag(&tag).or_else(|| {
                let known: Vec<_> = Algorithm::ALL.iter().map(|a| a.tag()).collect();
                errs.push(format!("experiment.algorithm: unknown algorithm `{tag}` (expected one of {})", known.join(", ")));
                None
            }),
        };
        let seeds = exp
            .list("seeds", &mut errs, "a list of non-negative integers", |v| {
                v.as_integer().and_then(|i| u64::try_from(i).ok())
            })
            .unwrap_or_else(|| vec![0]);
        if seeds.is_empty() {
            errs.push("experiment.seeds: must not be empty".into());
        }
        let name = exp
            .string("name", &mut errs)
            .unwrap_or_else(|| algorithm.map_or("run", Algorithm::tag).to_string());
        let output = base_dir.join(exp.string("output", &mut errs).unwrap_or_else(|| format!("runs/{name}")));
        exp.finish(&mut errs);

        let mut wind = None;
        let env = env_section(&mut root, base_dir, &mut inputs, &mut wind, &mut errs);
        let policy = net_section(&mut root, "policy", NetSpec::defaults(0.01), &mut errs);
        let value = net_section(&mut root, "value", NetSpec::defaults(1.0), &mut errs);
        let discriminator = net_section(&mut root, "discriminator", NetSpec::defaults(1.0), &mut errs);
        let mut params = algorithm.map(|a| params_section(&mut root, a, &mut errs));
        if let (Some(AlgorithmParams::PolicyEval(p)), Some(w)) = (params.as_mut(), wind) {
            p.action_probs.get_or_insert_with(|| w.to_vec());
        }
        let expert = algorithm.and_then(|a| expert_section(&mut root, a, base_dir, &mut inputs, &mut errs));

        let mut ev = Section::take(&mut root, "eval", &mut errs);
        let eval = EvalSpec {
            episodes: ev.usize("episodes", 30, &mut errs),
            seed: ev.u64("seed", 1_000_003, &mut errs),
        };
        ev.finish(&mut errs);
        let mut acc = Section::take(&mut root, "acceptance", &mut errs);
        let min_eval_return = acc.opt_f64("min_eval_return", &mut errs);
        acc.finish(&mut errs);
        for key in root.keys() {
            errs.push(format!("[{key}]: unknown section"));
        }

        if let (Some(a), Some(env)) = (algorithm, &env) {
            if a.is_tabular() && env.tabular_model().is_none() {
                errs.push(format!("{a} needs a tabular environment (two-state, gridworld or mdp)"));
            }
            if policy.kind == PolicyKind::Linear && matches!(env, EnvSpec::CartPole { continuous: true, .. }) {
                errs.push("policy.kind: linear policies need a discrete action space".into());
            }
            if matches!(a, Algorithm::Bc | Algorithm::Dagger | Algorithm::Gail) && policy.kind == PolicyKind::Linear {
                errs.push(format!("policy.kind: {a} trains an mlp policy"));
            }
            if a == Algorithm::Dagger && !matches!(env, EnvSpec::NavGrid { .. } | EnvSpec::CartPole { .. }) {
                errs.push("dagger needs a navgrid or cartpole environment".into());
            }
        }
        if let (Some(e), Some(env)) = (&expert, &env) {
            if e.source == ExpertSource::Oracle && !matches!(env, EnvSpec::NavGrid { .. }) {
                errs.push("expert.kind: the oracle expert exists only for navgrid".into());
            }
        }
        if policy.log_std.is_some() && !matches!(env, Some(EnvSpec::CartPole { continuous: true, .. })) {
            errs.push("policy.log_std: only meaningful for continuous actions".into());
        }
        if !errs.is_empty() {
            return Err(Error::Validation(errs));
        }
        let (Some(algorithm), Some(env), Some(params)) = (algorithm, env, params) else {
            unreachable!("missing pieces always record an error");
        };
        Ok(ExperimentConfig {
            name,
            algorithm,
            seeds,
            output,
            env,
            policy,
            value,
            discriminator,
            params,
            expert,
            eval,
            min_eval_return,
            source: text.to_string(),
            inputs,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_text(&text, base)
    }

    /// Hex SHA-256 over the config text, every referenced input file and the
    /// seed. Equal hashes mean equal inputs.
    pub fn input_hash(&self, seed: u64) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(format!("config {}\0", self.source.len()));
        h.update(self.source.as_bytes());
        for (path, bytes) in &self.inputs {
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            h.update(format!("input {name} {}\0", bytes.len()));
            h.update(bytes);
        }
        h.update(format!("seed {seed}"));
        hex::encode(h.finalize())
    }
}
