//! `walling`: run, replicate, sweep, train and plot two-swarm experiments.
//!
//! Settings are layered: built-in defaults, then `--config <file>`, then
//! explicit flags. Exit code 0 means success, 1 a runtime failure and 2 a
//! usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use walling_core::harness::{self, ControllerKind, ExperimentSpec};
use walling_core::{Error, RunConfig};

#[derive(Parser)]
#[command(name = "walling", version, about = "Two-swarm walling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One simulation; writes run.csv and optional snapshots.
    Run {
        #[command(flatten)]
        common: Common,
        /// Tick counts at which to dump positions, e.g. 1,1000.
        #[arg(long, value_delimiter = ',')]
        snapshot_at: Vec<u64>,
    },
    /// Replicated simulations; writes agg.csv.
    Experiment {
        #[command(flatten)]
        common: Common,
    },
    /// Population-size grid; writes sweep.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Swarm A sizes: a list such as 5,10,15 or a range such as 10..100:10.
        #[arg(long, default_value = "10..100:10")]
        sizes_a: String,
        /// Swarm B sizes, same syntax.
        #[arg(long, default_value = "10..100:10")]
        sizes_b: String,
    },
    /// DQN training; writes checkpoints and train_log.csv.
    Train {
        #[command(flatten)]
        scenario: ScenarioFlags,
        /// Total environment steps.
        #[arg(long)]
        steps: Option<u64>,
        /// Walling timer (seconds) used as the standstill hold.
        #[arg(long)]
        timer: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Render CSV files as SVG charts.
    Plot {
        /// run.csv, agg.csv, sweep.csv, train_log.csv or snap_<step>.csv files.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "plots")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ScenarioFlags {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=5))]
    case: Option<u8>,
    /// Size of both swarms.
    #[arg(long)]
    swarm_size: Option<usize>,
    #[arg(long)]
    swarm_size_a: Option<usize>,
    #[arg(long)]
    swarm_size_b: Option<usize>,
}

#[derive(Args)]
struct Common {
    #[command(flatten)]
    scenario: ScenarioFlags,
    #[arg(long, value_parser = ["fsm", "rl"], default_value = "fsm")]
    controller: String,
    /// Walling timer in seconds.
    #[arg(long, default_value_t = 0.0)]
    timer: f64,
    #[arg(long, default_value_t = 5000)]
    steps: u64,
    /// Replications (default 100 for experiment, 2 for sweep).
    #[arg(long)]
    reps: Option<usize>,
    /// Base seed; replication i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Trained network for the rl controller.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Error> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

impl ScenarioFlags {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(c) = self.case {
            cfg.scenario.case_id = c;
        }
        if let Some(n) = self.swarm_size {
            cfg.scenario.n_a = n;
            cfg.scenario.n_b = n;
        }
        if let Some(n) = self.swarm_size_a {
            cfg.scenario.n_a = n;
        }
        if let Some(n) = self.swarm_size_b {
            cfg.scenario.n_b = n;
        }
    }
}

impl Common {
    fn spec(&self, default_reps: usize) -> Result<ExperimentSpec, Error> {
        let mut cfg = load_config(self.config.as_deref())?;
        self.scenario.apply(&mut cfg);
        let spec = ExperimentSpec {
            base_seed: self.seed.unwrap_or(cfg.sim.seed),
            scenario: cfg.scenario,
            sim: cfg.sim,
            controller: self.controller.parse::<ControllerKind>()?,
            walling_timer_s: self.timer,
            replications: self.reps.unwrap_or(default_reps),
            steps: self.steps,
            checkpoint: self.checkpoint.clone(),
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn execute(command: Command) -> Result<Vec<PathBuf>, Error> {
    match command {
        Command::Run { common, snapshot_at } => harness::cmd_run(&common.spec(1)?, &snapshot_at, &common.out),
        Command::Experiment { common } => Ok(vec![harness::cmd_experiment(&common.spec(100)?, &common.out)?]),
        Command::Sweep {
            common,
            sizes_a,
            sizes_b,
        } => {
            let a = harness::parse_sizes(&sizes_a)?;
            let b = harness::parse_sizes(&sizes_b)?;
            Ok(vec![harness::cmd_sweep(&common.spec(2)?, &a, &b, &common.out)?])
        }
        Command::Train {
            scenario,
            steps,
            timer,
            seed,
            config,
            out,
            resume,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            scenario.apply(&mut cfg);
            if let Some(t) = timer {
                cfg.training.walling_timer_s = t;
            }
            if let Some(t) = steps {
                cfg.training.total_steps = t;
            }
            cfg.scenario.validate()?;
            cfg.training.validate()?;
            let seed = seed.unwrap_or(cfg.sim.seed);
            Ok(vec![harness::cmd_train(&cfg, seed, resume.as_deref(), steps, &out)?])
        }
        Command::Plot { inputs, out } => {
            let mut written = Vec::new();
            for input in &inputs {
                written.extend(harness::cmd_plot(input, &out)?);
            }
            Ok(written)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
