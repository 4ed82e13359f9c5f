use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use rlab_cli::service::{serve, ServiceConfig};
use rlab_core::experiments::teleop::replay_dataset;
use rlab_core::experiments::{agent_from_checkpoint, emit_plot_data, evaluate_agent, run_seed, ExperimentConfig, MetricTable};
use rlab_core::imitation::DemonstrationDataset;
use rlab_core::nn::Checkpoint;

/// Reinforcement and imitation learning experiments.
///
/// Exit status: 0 on success, 1 when an acceptance threshold or replay
/// check fails, 2 on any other error.
#[derive(Parser)]
#[command(name = "rlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured seed; writes metrics.csv, checkpoint.bin and
    /// summary.txt under <output>/seed-<n>.
    Run {
        config: PathBuf,
        /// Run only this seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: the config's `output`).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Greedy evaluation of a checkpoint in the config's environment.
    Eval {
        config: PathBuf,
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 30)]
        episodes: usize,
        /// Evaluation seed (default: the config's `[eval] seed`).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Serve teleoperation sessions in the config's environment.
    DemoServe {
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        /// Agent checkpoint proposing actions in dagger-correct sessions.
        #[arg(long)]
        learner: Option<PathBuf>,
        /// Where ended sessions write their datasets.
        #[arg(long, default_value = "demos")]
        data_dir: PathBuf,
    },
    /// Re-execute a dataset's actions and check every recorded state.
    Replay { dataset: PathBuf, config: PathBuf },
    /// Raw and moving-average series of one metrics column, as CSV.
    PlotData {
        metrics: PathBuf,
        /// Column to smooth (default: the first after the index column).
        #[arg(long)]
        column: Option<String>,
        #[arg(long, default_value_t = 10)]
        window: usize,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))
}

fn run(config: &Path, seed: Option<u64>, output: Option<PathBuf>) -> Result<bool> {
    let cfg = load_config(config)?;
    let seeds = seed.map_or_else(|| cfg.seeds.clone(), |s| vec![s]);
    let out = output.unwrap_or_else(|| cfg.output.clone());
    let mut ok = true;
    for seed in seeds {
        let rec = run_seed(&cfg, seed, &out.join(format!("seed-{seed}")))?;
        let eval = rec.eval_return.map_or("-".into(), |r| format!("{r:.2}"));
        let verdict = match rec.passed {
            Some(true) => " pass",
            Some(false) => " FAIL",
            None => "",
        };
        println!(
            "{} seed {seed}: eval {eval}{verdict} ({:.1}s) -> {}",
            rec.algorithm,
            rec.wall_time.as_secs_f64(),
            rec.dir.display()
        );
        ok &= rec.passed != Some(false);
    }
    Ok(ok)
}

fn eval(config: &Path, checkpoint: &Path, episodes: usize, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(config)?;
    if episodes == 0 {
        bail!("--episodes must be positive");
    }
    let agent = agent_from_checkpoint(&Checkpoint::load(checkpoint)?)?;
    let returns = evaluate_agent(&cfg, &agent, episodes, seed.unwrap_or(cfg.eval.seed))?;
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let sd = (returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    let min = returns.iter().copied().fold(f64::INFINITY, f64::min);
    let max = returns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    println!("episodes = {episodes}\nmean = {mean}\nstd = {sd}\nmin = {min}\nmax = {max}");
    Ok(())
}

fn demo_serve(config: &Path, bind: &str, learner: Option<PathBuf>, data_dir: PathBuf) -> Result<()> {
    let cfg = load_config(config)?;
    let learner = match learner {
        Some(p) => Some(agent_from_checkpoint(&Checkpoint::load(&p)?)?),
        None => None,
    };
    let service = ServiceConfig {
        env: cfg.env.build()?,
        learner,
        data_dir,
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(bind).await.with_context(|| format!("binding {bind}"))?;
        println!("listening on http://{}", listener.local_addr()?);
        serve(listener, service).await?;
        Ok(())
    })
}

fn replay(dataset: &Path, config: &Path) -> Result<bool> {
    let cfg = load_config(config)?;
    let ds = DemonstrationDataset::load(dataset)?;
    let mut env = cfg.env.build()?;
    match replay_dataset(&mut env, &ds) {
        Ok(n) => {
            println!("{} trajectories, {n} transitions reproduced", ds.trajectories().len());
            Ok(true)
        }
        Err(rlab_core::error::Error::Contract(m)) => {
            println!("mismatch: {m}");
            Ok(false)
        }
        Err(e) => Err(e.into()),
    }
}

fn plot_data(metrics: &Path, column: Option<String>, window: usize, out: Option<PathBuf>) -> Result<()> {
    let table = MetricTable::load(metrics)?;
    let column = match column.or_else(|| table.columns.get(1).cloned()) {
        Some(c) => c,
        None => bail!("{} has no metric columns", metrics.display()),
    };
    let csv = emit_plot_data(&table, &column, window)?;
    match out {
        Some(p) => std::fs::write(&p, csv).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config, seed, output } => run(&config, seed, output),
        Command::Eval {
            config,
            checkpoint,
            episodes,
            seed,
        } => eval(&config, &checkpoint, episodes, seed).map(|()| true),
        Command::DemoServe {
            config,
            bind,
            learner,
            data_dir,
        } => demo_serve(&config, &bind, learner, data_dir).map(|()| true),
        Command::Replay { dataset, config } => replay(&dataset, &config),
        Command::PlotData {
            metrics,
            column,
            window,
            out,
        } => plot_data(&metrics, column, window, out).map(|()| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
