//! Replicated experiments, population sweeps, training runs and plots.
//!
//! Replication `i` of an experiment uses world seed `base_seed + i`, so a
//! single run with seed `base_seed + i` reproduces it exactly. Replications
//! run on a thread pool and are joined in replication order.

pub mod csvio;
pub mod plot;

use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SimConfig};
use crate::fsm::FsmController;
use crate::metrics::TickMetrics;
use crate::qnet::{load_checkpoint, NetworkParameters, RlController};
use crate::scenario::ScenarioSpec;
use crate::sim::{init_world, Controller, WorldState};
use crate::train::Trainer;
use crate::Error;

pub use csvio::{AggregateRow, RunRow, SnapshotRow, SweepRow, TrainLogCsvRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Fsm,
    Rl,
}

impl FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "fsm" => Ok(ControllerKind::Fsm),
            "rl" => Ok(ControllerKind::Rl),
            other => Err(Error::Config(format!("unknown controller {other:?} (expected fsm or rl)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub scenario: ScenarioSpec,
    pub sim: SimConfig,
    pub controller: ControllerKind,
    pub walling_timer_s: f64,
    pub replications: usize,
    pub steps: u64,
    pub base_seed: u64,
    /// Trained network for the `rl` controller.
    pub checkpoint: Option<PathBuf>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            scenario: ScenarioSpec::default(),
            sim: SimConfig::default(),
            controller: ControllerKind::Fsm,
            walling_timer_s: 0.0,
            replications: 100,
            steps: 5000,
            base_seed: 0,
            checkpoint: None,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), Error> {
        self.scenario.validate()?;
        self.sim.validate()?;
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if !(self.walling_timer_s.is_finite() && self.walling_timer_s >= 0.0) {
            return Err(Error::Config("walling timer must be a non-negative number of seconds".into()));
        }
        if self.controller == ControllerKind::Rl && self.checkpoint.is_none() {
            return Err(Error::Config("the rl controller needs --checkpoint".into()));
        }
        Ok(())
    }

    /// Same experiment at other population sizes.
    pub fn with_sizes(&self, n_a: usize, n_b: usize) -> Self {
        let mut s = self.clone();
        s.scenario.n_a = n_a;
        s.scenario.n_b = n_b;
        s
    }
}

/// A controller ready to be instantiated once per run.
#[derive(Debug, Clone)]
pub enum Policy {
    Fsm { timer_ticks: u32 },
    Rl { params: NetworkParameters, hold_ticks: u32 },
}

impl Policy {
    /// Validates the spec and loads the checkpoint if one is needed.
    pub fn load(spec: &ExperimentSpec) -> Result<Self, Error> {
        spec.validate()?;
        let ticks = spec.sim.seconds_to_ticks(spec.walling_timer_s);
        match spec.controller {
            ControllerKind::Fsm => Ok(Policy::Fsm { timer_ticks: ticks }),
            ControllerKind::Rl => {
                let path = spec.checkpoint.as_deref().expect("validated above");
                let (params, _) = load_checkpoint(path)?;
                Ok(Policy::Rl {
                    params,
                    hold_ticks: ticks,
                })
            }
        }
    }

    fn with_controller<T>(&self, f: impl FnOnce(&mut dyn Controller) -> T) -> T {
        match self {
            Policy::Fsm { timer_ticks } => f(&mut FsmController::new(*timer_ticks)),
            Policy::Rl { params, hold_ticks } => f(&mut RlController::new(params, 0.0, *hold_ticks)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run_id: usize,
    /// Exactly `steps` entries, for steps 1 through `steps`.
    pub metrics: Vec<TickMetrics>,
}

/// Positions and controller states after `step` ticks.
pub fn snapshot(world: &WorldState) -> Vec<SnapshotRow> {
    world
        .robots
        .iter()
        .map(|r| SnapshotRow {
            id: r.id,
            swarm: r.swarm.label().to_string(),
            x: r.position.x,
            y: r.position.y,
            fsm_state: r.controller_state.label().to_string(),
        })
        .collect()
}

/// One simulation with world seed `seed`. `snapshot_at` lists tick counts
/// (0 is the initial placement) at which `on_snapshot` is called.
pub fn simulate(
    spec: &ExperimentSpec,
    policy: &Policy,
    seed: u64,
    snapshot_at: &[u64],
    mut on_snapshot: impl FnMut(u64, &WorldState) -> Result<(), Error>,
) -> Result<Vec<TickMetrics>, Error> {
    let sim = SimConfig {
        seed,
        ..spec.sim.clone()
    };
    let mut world = init_world(&spec.scenario, &sim)?;
    if snapshot_at.contains(&0) {
        on_snapshot(0, &world)?;
    }
    policy.with_controller(|controller| {
        let mut out = Vec::with_capacity(spec.steps as usize);
        for _ in 0..spec.steps {
            out.push(crate::sim::tick(&mut world, controller)?);
            if snapshot_at.contains(&world.step) {
                on_snapshot(world.step, &world)?;
            }
        }
        Ok(out)
    })
}

/// All replications, concurrently, in replication order.
pub fn run_replications(spec: &ExperimentSpec, policy: &Policy) -> Result<Vec<RunRecord>, Error> {
    (0..spec.replications)
        .into_par_iter()
        .map(|i| {
            let metrics = simulate(spec, policy, spec.base_seed.wrapping_add(i as u64), &[], |_, _| Ok(()))?;
            Ok(RunRecord { run_id: i, metrics })
        })
        .collect()
}

/// Same as [`run_replications`] on the calling thread only.
pub fn run_replications_sequential(spec: &ExperimentSpec, policy: &Policy) -> Result<Vec<RunRecord>, Error> {
    (0..spec.replications)
        .map(|i| {
            let metrics = simulate(spec, policy, spec.base_seed.wrapping_add(i as u64), &[], |_, _| Ok(()))?;
            Ok(RunRecord { run_id: i, metrics })
        })
        .collect()
}

/// Per-step mean, min and max over runs. Means are summed in run order.
pub fn aggregate(runs: &[RunRecord]) -> Result<Vec<AggregateRow>, Error> {
    let first = runs.first().ok_or_else(|| Error::Config("nothing to aggregate".into()))?;
    let steps = first.metrics.len();
    if runs.iter().any(|r| r.metrics.len() != steps) {
        return Err(Error::Config("runs have different lengths".into()));
    }
    let n = runs.len() as f64;
    Ok((0..steps)
        .map(|s| {
            let col = |f: fn(&TickMetrics) -> f64| {
                let mut sum = 0.0;
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for r in runs {
                    let v = f(&r.metrics[s]);
                    sum += v;
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
                (sum / n, lo, hi)
            };
            let (ma, la, ha) = col(|m| m.coverage_a);
            let (mb, lb, hb) = col(|m| m.coverage_b);
            let (mm, lm, hm) = col(|m| m.mixing);
            AggregateRow {
                step: first.metrics[s].step,
                mean_coverage_a: ma,
                min_coverage_a: la,
                max_coverage_a: ha,
                mean_coverage_b: mb,
                min_coverage_b: lb,
                max_coverage_b: hb,
                mean_mixing: mm,
                min_mixing: lm,
                max_mixing: hm,
            }
        })
        .collect())
}

/// Runs every `(n_a, n_b)` pair `spec.replications` times and averages the
/// final-step metrics. Rows come out in `sizes_a`-major order.
pub fn sweep(spec: &ExperimentSpec, policy: &Policy, sizes_a: &[usize], sizes_b: &[usize]) -> Result<Vec<SweepRow>, Error> {
    let pairs: Vec<(usize, usize)> = sizes_a
        .iter()
        .flat_map(|&a| sizes_b.iter().map(move |&b| (a, b)))
        .collect();
    for &(a, b) in &pairs {
        spec.with_sizes(a, b).scenario.validate()?;
    }
    let reps = spec.replications;
    let finals: Vec<TickMetrics> = (0..pairs.len() * reps)
        .into_par_iter()
        .map(|job| {
            let (a, b) = pairs[job / reps];
            let seed = spec.base_seed.wrapping_add((job % reps) as u64);
            let run = simulate(&spec.with_sizes(a, b), policy, seed, &[], |_, _| Ok(()))?;
            Ok(*run.last().expect("steps >= 1"))
        })
        .collect::<Result<_, Error>>()?;
    Ok(pairs
        .iter()
        .zip(finals.chunks(reps))
        .map(|(&(n_a, n_b), runs)| {
            let mean = |f: fn(&TickMetrics) -> f64| runs.iter().map(f).sum::<f64>() / reps as f64;
            SweepRow {
                n_a,
                n_b,
                coverage_a: mean(|m| m.coverage_a),
                coverage_b: mean(|m| m.coverage_b),
                mixing: mean(|m| m.mixing),
            }
        })
        .collect())
}

/// First step from which the value stays below `threshold` for the rest of
/// the series, or `None` if the last value is not below it.
pub fn settling_step(steps: &[u64], values: &[f64], threshold: f64) -> Option<u64> {
    let mut start = None;
    for (&s, &v) in steps.iter().zip(values) {
        if v < threshold {
            start.get_or_insert(s);
        } else {
            start = None;
        }
    }
    start
}

fn ensure_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// `run`: writes `run.csv` and one `snap_<step>.csv` per requested step.
pub fn cmd_run(spec: &ExperimentSpec, snapshot_at: &[u64], out: &Path) -> Result<Vec<PathBuf>, Error> {
    let policy = Policy::load(spec)?;
    if let Some(&s) = snapshot_at.iter().find(|&&s| s > spec.steps) {
        return Err(Error::Config(format!("snapshot step {s} is past the last step {}", spec.steps)));
    }
    ensure_dir(out)?;
    let mut written = Vec::new();
    let metrics = simulate(spec, &policy, spec.base_seed, snapshot_at, |step, world| {
        let path = out.join(format!("snap_{step}.csv"));
        csvio::write_csv(&path, &snapshot(world), csvio::SNAPSHOT_HEADER)?;
        written.push(path);
        Ok(())
    })?;
    let rows: Vec<RunRow> = metrics.into_iter().map(RunRow::from).collect();
    let path = out.join("run.csv");
    csvio::write_csv(&path, &rows, csvio::RUN_HEADER)?;
    written.insert(0, path);
    Ok(written)
}

/// `experiment`: writes `agg.csv`.
pub fn cmd_experiment(spec: &ExperimentSpec, out: &Path) -> Result<PathBuf, Error> {
    let policy = Policy::load(spec)?;
    let runs = run_replications(spec, &policy)?;
    let rows = aggregate(&runs)?;
    ensure_dir(out)?;
    let path = out.join("agg.csv");
    csvio::write_csv(&path, &rows, csvio::AGG_HEADER)?;
    Ok(path)
}

/// `sweep`: writes `sweep.csv`.
pub fn cmd_sweep(spec: &ExperimentSpec, sizes_a: &[usize], sizes_b: &[usize], out: &Path) -> Result<PathBuf, Error> {
    if sizes_a.is_empty() || sizes_b.is_empty() {
        return Err(Error::Config("sweep needs at least one size per swarm".into()));
    }
    let policy = Policy::load(spec)?;
    let rows = sweep(spec, &policy, sizes_a, sizes_b)?;
    ensure_dir(out)?;
    let path = out.join("sweep.csv");
    csvio::write_csv(&path, &rows, csvio::SWEEP_HEADER)?;
    Ok(path)
}

/// `train`: trains from scratch with `config` and `seed`, or resumes from a
/// checkpoint (whose stored hyperparameters then apply; `total_steps`
/// overrides the stored one). Checkpoints and `train_log.csv` go to `out`.
/// On resume, log rows at or past the resume step are replaced.
pub fn cmd_train(
    config: &RunConfig,
    seed: u64,
    resume: Option<&Path>,
    total_steps: Option<u64>,
    out: &Path,
) -> Result<PathBuf, Error> {
    let mut trainer = match resume {
        Some(path) => {
            let (_, file) = load_checkpoint(path)?;
            Trainer::from_checkpoint(&file, total_steps)?
        }
        None => {
            let mut training = config.training.clone();
            if let Some(t) = total_steps {
                training.total_steps = t;
            }
            Trainer::new(config.sim.clone(), config.scenario.clone(), training, seed)?
        }
    };
    ensure_dir(out)?;
    let log_path = out.join("train_log.csv");
    let mut log: Vec<TrainLogCsvRow> = Vec::new();
    if resume.is_some() && log_path.exists() {
        let start = trainer.step();
        log = csvio::read_csv::<TrainLogCsvRow>(&log_path, csvio::TRAIN_LOG_HEADER)?
            .into_iter()
            .filter(|r| r.step < start)
            .collect();
    }
    let final_path = trainer.run(Some(out), |_, row| log.push(TrainLogCsvRow::from(row)))?;
    csvio::write_csv(&log_path, &log, csvio::TRAIN_LOG_HEADER)?;
    Ok(final_path.expect("a checkpoint directory was given"))
}

/// `plot`: renders whichever kind of CSV `input` is into `out`.
pub fn cmd_plot(input: &Path, out: &Path) -> Result<Vec<PathBuf>, Error> {
    plot::plot_file(input, out)
}

/// Parses a size list such as `5,10,15` or a range `10..100:10` (inclusive).
pub fn parse_sizes(text: &str) -> Result<Vec<usize>, Error> {
    let bad = || Error::Config(format!("bad size list {text:?}"));
    if let Some((range, step)) = text.split_once(':') {
        let (lo, hi) = range.split_once("..").ok_or_else(bad)?;
        let lo: usize = lo.trim().parse().map_err(|_| bad())?;
        let hi: usize = hi.trim().parse().map_err(|_| bad())?;
        let step: usize = step.trim().parse().map_err(|_| bad())?;
        if step == 0 || lo > hi {
            return Err(bad());
        }
        return Ok((lo..=hi).step_by(step).collect());
    }
    text.split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|_| bad()))
        .collect()
}
