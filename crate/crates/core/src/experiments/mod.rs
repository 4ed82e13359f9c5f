//! Config-driven experiment runs, metrics files and teleoperation sessions.

mod agent;
mod config;
mod envs;
mod metrics;
mod runner;
pub mod teleop;

pub use agent::{agent_checkpoint, agent_from_checkpoint, value_from_checkpoint, AnyCache, AnyPolicy};
pub use config::{
    Algorithm, AlgorithmParams, EnvSpec, EvalSpec, ExperimentConfig, ExpertSource, ExpertSpec, NetSpec, PolicyKind,
    TabularParams,
};
pub use envs::EnvInstance;
pub use metrics::{emit_plot_data, moving_average, MetricTable};
pub use runner::{
    evaluate_agent, head_for, run, run_seed, RunRecord, CHECKPOINT_FILE, CONFIG_FILE, METRICS_FILE, SUMMARY_FILE,
};
