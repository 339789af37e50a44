//! DQN training of the shared policy with experience replay and a target network.
//!
//! Every environment tick each robot contributes one transition to a single
//! replay buffer. Once the buffer holds `warmup_transitions` entries, each
//! tick also performs one gradient step on a uniformly sampled minibatch.
//! Worlds are re-placed every `episode_length` ticks from a seed derived from
//! the run seed and the episode index, so a checkpoint taken at an episode
//! boundary is enough to continue a run bit for bit.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use walling_kernel::{Adam, AdamConfig, Mode, Tape, Tensor};

use crate::config::SimConfig;
use crate::geometry::Point2;
use crate::metrics::TickMetrics;
use crate::qnet::checkpoint::{decode_bytes, decode_f32s, encode_bytes, encode_f32s};
use crate::qnet::{
    encode_observation, forward_on_tape, q_forward, register, save_checkpoint, ActionId, CheckpointError,
    CheckpointFile, EncodedObservation, EncodedTensor, NetworkParameters, NetworkShape, RlController,
    TOKEN_FEATURES,
};
use crate::scenario::ScenarioSpec;
use crate::sim::{init_world, ControllerState, ObservationFrame, SpatialGrid, Swarm, WorldState, FRAME_SIZE};
use crate::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub buffer_capacity: usize,
    pub target_sync_interval: u64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_steps: u64,
    pub total_steps: u64,
    pub episode_length: u64,
    pub warmup_transitions: usize,
    pub w_cov: f64,
    pub w_mix: f64,
    pub w_dead: f64,
    pub w_prox: f64,
    /// Ticks over which deadlock displacement is measured.
    pub deadlock_window: usize,
    /// Deadlock displacement threshold, in robot radii.
    pub deadlock_displacement_radii: f64,
    /// Proximity penalty threshold, in robot radii.
    pub proximity_radii: f64,
    pub huber_delta: f64,
    pub dropout_rate: f64,
    /// Must be a multiple of `episode_length`.
    pub checkpoint_interval: u64,
    /// Standstill hold for the learned controller, in seconds.
    pub walling_timer_s: f64,
    pub hidden: usize,
    pub heads: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            buffer_capacity: 100_000,
            target_sync_interval: 1000,
            learning_rate: 0.001,
            batch_size: 64,
            gamma: 0.99,
            epsilon_start: 1.0,
            epsilon_end: 0.01,
            epsilon_decay_steps: 50_000,
            total_steps: 500_000,
            episode_length: 1000,
            warmup_transitions: 1000,
            w_cov: 10.0,
            w_mix: 10.0,
            w_dead: 0.5,
            w_prox: 0.1,
            deadlock_window: 50,
            deadlock_displacement_radii: 1.0,
            proximity_radii: 4.0,
            huber_delta: 1.0,
            dropout_rate: 0.2,
            checkpoint_interval: 10_000,
            walling_timer_s: 0.0,
            hidden: 128,
            heads: 4,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: String| Err(Error::Config(m));
        if self.buffer_capacity == 0 || self.batch_size == 0 || self.batch_size > self.buffer_capacity {
            return bad(format!(
                "need 0 < batch_size ({}) <= buffer_capacity ({})",
                self.batch_size, self.buffer_capacity
            ));
        }
        if self.target_sync_interval == 0 || self.episode_length == 0 || self.checkpoint_interval == 0 {
            return bad("intervals and episode_length must be positive".into());
        }
        if self.total_steps == 0 {
            return bad("total_steps must be positive".into());
        }
        if self.checkpoint_interval % self.episode_length != 0 {
            return bad(format!(
                "checkpoint_interval {} must be a multiple of episode_length {}",
                self.checkpoint_interval, self.episode_length
            ));
        }
        if !(self.learning_rate > 0.0) || !(0.0..=1.0).contains(&self.gamma) {
            return bad("learning_rate must be positive and gamma in [0, 1]".into());
        }
        if !(0.0 <= self.epsilon_end && self.epsilon_end <= self.epsilon_start && self.epsilon_start <= 1.0) {
            return bad("need 0 <= epsilon_end <= epsilon_start <= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)".into());
        }
        for (name, v) in [
            ("w_cov", self.w_cov),
            ("w_mix", self.w_mix),
            ("w_dead", self.w_dead),
            ("w_prox", self.w_prox),
            ("deadlock_displacement_radii", self.deadlock_displacement_radii),
            ("proximity_radii", self.proximity_radii),
            ("huber_delta", self.huber_delta),
            ("walling_timer_s", self.walling_timer_s),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if self.deadlock_window == 0 {
            return bad("deadlock_window must be positive".into());
        }
        self.network_shape().validate()
    }

    pub fn network_shape(&self) -> NetworkShape {
        NetworkShape {
            hidden: self.hidden,
            heads: self.heads,
        }
    }
}

/// Linear decay from `epsilon_start` to `epsilon_end` over `epsilon_decay_steps`.
pub fn epsilon_at(config: &TrainingConfig, step: u64) -> f64 {
    if config.epsilon_decay_steps == 0 || step >= config.epsilon_decay_steps {
        return config.epsilon_end;
    }
    let frac = step as f64 / config.epsilon_decay_steps as f64;
    config.epsilon_start + frac * (config.epsilon_end - config.epsilon_start)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub obs: EncodedObservation,
    pub action: ActionId,
    pub reward: f32,
    pub next_obs: EncodedObservation,
    pub done: bool,
}

/// Fixed-capacity FIFO ring of transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    /// Slot the next push overwrites once the buffer is full.
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            items: Vec::new(),
            cursor: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
            self.cursor = (self.cursor + 1) % self.capacity;
        }
    }

    /// Stored transitions from oldest to newest.
    pub fn iter_oldest_first(&self) -> impl Iterator<Item = &Transition> {
        let (newer, older) = self.items.split_at(self.cursor);
        older.iter().chain(newer)
    }

    /// `n` transitions drawn uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Transition> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n)
            .map(|_| self.items[rng.random_range(0..self.items.len())])
            .collect()
    }

    /// Indices `sample` would draw; exposed for sampling audits.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        (0..n).map(|_| rng.random_range(0..self.items.len())).collect()
    }
}

/// Per-robot memory of positions and whether each action asked to move.
#[derive(Debug, Clone, PartialEq)]
pub struct DeadlockTracker {
    window: usize,
    positions: VecDeque<Point2>,
    moving: VecDeque<bool>,
}

impl DeadlockTracker {
    pub fn new(window: usize, start: Point2) -> Self {
        let mut positions = VecDeque::with_capacity(window + 1);
        positions.push_back(start);
        Self {
            window,
            positions,
            moving: VecDeque::with_capacity(window),
        }
    }

    /// Records the position after a tick and whether that tick's action moved.
    pub fn record(&mut self, position: Point2, moving: bool) {
        self.positions.push_back(position);
        self.moving.push_back(moving);
        if self.positions.len() > self.window + 1 {
            self.positions.pop_front();
        }
        if self.moving.len() > self.window {
            self.moving.pop_front();
        }
    }

    /// True when every action in the last `window` ticks was a moving action
    /// but the robot got less than `threshold` away from where it started.
    pub fn deadlocked(&self, threshold: f64) -> bool {
        self.moving.len() == self.window
            && self.moving.iter().all(|&m| m)
            && self.positions[0].dist(*self.positions.back().expect("non-empty")) < threshold
    }
}

/// Shaped reward for one robot over one tick.
pub fn compute_reward(
    prev: &TickMetrics,
    next: &TickMetrics,
    swarm: Swarm,
    deadlocked: bool,
    nearest_distance: Option<f64>,
    sim: &SimConfig,
    config: &TrainingConfig,
) -> f64 {
    let (cov_prev, cov_next) = match swarm {
        Swarm::A => (prev.coverage_a, next.coverage_a),
        Swarm::B => (prev.coverage_b, next.coverage_b),
    };
    let too_close = nearest_distance.is_some_and(|d| d < config.proximity_radii * sim.robot_radius);
    config.w_cov * (cov_next - cov_prev) / 100.0 - config.w_mix * (next.mixing - prev.mixing) / 100.0
        - if deadlocked { config.w_dead } else { 0.0 }
        - if too_close { config.w_prox } else { 0.0 }
}

/// `r + γ · max_a' Q_target(s', a') · (1 − done)` for each transition.
pub fn td_targets(
    target: &NetworkParameters,
    batch: &[Transition],
    gamma: f64,
) -> Result<Vec<f32>, Error> {
    let next: Vec<EncodedObservation> = batch.iter().map(|t| t.next_obs).collect();
    let q_next = q_forward(target, &next)?;
    Ok(batch
        .iter()
        .zip(&q_next)
        .map(|(t, q)| {
            if t.done {
                t.reward
            } else {
                (t.reward as f64 + gamma * q.max() as f64) as f32
            }
        })
        .collect())
}

/// Options for [`td_update`].
#[derive(Debug, Clone, Copy)]
pub struct TdOptions {
    pub gamma: f64,
    pub huber_delta: f64,
    pub dropout_rate: f64,
}

/// One Huber-loss gradient step of the online network toward the TD targets
/// computed with the (untouched) target network. Returns the loss.
pub fn td_update<R: Rng + ?Sized>(
    online: &mut NetworkParameters,
    target: &NetworkParameters,
    batch: &[Transition],
    adam: &mut Adam,
    options: TdOptions,
    rng: &mut R,
) -> Result<f32, Error> {
    let y = td_targets(target, batch, options.gamma)?;
    let obs: Vec<EncodedObservation> = batch.iter().map(|t| t.obs).collect();
    let actions: Vec<usize> = batch.iter().map(|t| t.action.index()).collect();
    let mut tape = Tape::<f32>::new();
    let vars = register(&mut tape, online, true);
    let q = forward_on_tape(
        &mut tape,
        &vars,
        online.shape,
        &mut online.bn_stats,
        &obs,
        Mode::Train,
        options.dropout_rate,
        rng,
    )?;
    let picked = tape.pick(q, &actions)?;
    let loss = tape.huber(picked, &y, options.huber_delta as f32)?;
    let loss_value = tape.value(loss).data()[0];
    if !loss_value.is_finite() {
        return Err(Error::Kernel(walling_kernel::KernelError::Numeric(format!(
            "TD loss is {loss_value}"
        ))));
    }
    let mut grads = tape.backward(loss)?;
    let g: Vec<Tensor<f32>> = vars
        .vars
        .iter()
        .zip(&online.tensors)
        .map(|(&v, t)| grads.take_or_zeros(v, t.shape()))
        .collect();
    let mut params: Vec<&mut Tensor<f32>> = online.tensors.iter_mut().collect();
    adam.step(&mut params, &g)?;
    Ok(loss_value)
}

/// Bitwise copy of the online network.
pub fn sync_target(online: &NetworkParameters) -> NetworkParameters {
    online.clone()
}

/// Seed of the world used for episode `episode` of a run seeded with `seed`.
pub fn episode_seed(seed: u64, episode: u64) -> u64 {
    seed.wrapping_add((episode + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Seed of the trainer's own stream (initialization, dropout, sampling).
fn trainer_seed(seed: u64) -> u64 {
    seed ^ 0xD1B5_4A32_D192_ED03
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub step: u64,
    pub epsilon: f64,
    /// Absent until the warmup fills the buffer.
    pub loss: Option<f32>,
    /// Mean over robots of the reward accumulated so far this episode.
    pub episode_return_mean: f64,
    pub coverage_a: f64,
    pub coverage_b: f64,
    pub mixing: f64,
}

struct Episode {
    world: WorldState,
    frames: Vec<ObservationFrame>,
    trackers: Vec<DeadlockTracker>,
    returns: Vec<f64>,
    prev_metrics: TickMetrics,
}

/// Online and target networks, optimizer, replay buffer and schedules.
pub struct Trainer {
    pub config: TrainingConfig,
    pub sim: SimConfig,
    pub scenario: ScenarioSpec,
    pub seed: u64,
    online: NetworkParameters,
    target: NetworkParameters,
    adam: Adam,
    replay: ReplayBuffer,
    rng: ChaCha8Rng,
    step: u64,
    syncs: u64,
    updates: u64,
    hold_ticks: u32,
    episode: Option<Episode>,
}

impl Trainer {
    pub fn new(sim: SimConfig, scenario: ScenarioSpec, config: TrainingConfig, seed: u64) -> Result<Self, Error> {
        sim.validate()?;
        scenario.validate()?;
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(trainer_seed(seed));
        let online = NetworkParameters::init(config.network_shape(), &mut rng)?;
        let adam = Adam::new(adam_config(&config), online.tensors.iter().map(|t| t.shape()));
        let hold_ticks = sim.seconds_to_ticks(config.walling_timer_s);
        Ok(Self {
            target: sync_target(&online),
            online,
            adam,
            replay: ReplayBuffer::new(config.buffer_capacity),
            rng,
            step: 0,
            syncs: 0,
            updates: 0,
            hold_ticks,
            episode: None,
            config,
            sim,
            scenario,
            seed,
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn sync_count(&self) -> u64 {
        self.syncs
    }

    pub fn update_count(&self) -> u64 {
        self.updates
    }

    pub fn online(&self) -> &NetworkParameters {
        &self.online
    }

    pub fn target(&self) -> &NetworkParameters {
        &self.target
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn adam(&self) -> &Adam {
        &self.adam
    }

    fn start_episode(&mut self) -> Result<(), Error> {
        let index = self.step / self.config.episode_length;
        let sim = SimConfig {
            seed: episode_seed(self.seed, index),
            ..self.sim.clone()
        };
        let mut world = init_world(&self.scenario, &sim)?;
        let frames = world.sense_all();
        let trackers = world
            .robots
            .iter()
            .map(|r| DeadlockTracker::new(self.config.deadlock_window, r.position))
            .collect();
        let n = world.robots.len();
        self.episode = Some(Episode {
            prev_metrics: world.metrics(),
            world,
            frames,
            trackers,
            returns: vec![0.0; n],
        });
        Ok(())
    }

    /// One environment tick, its transitions and (after warmup) one update.
    pub fn step_once(&mut self) -> Result<TrainLogRow, Error> {
        if self.step % self.config.episode_length == 0 || self.episode.is_none() {
            if self.step % self.config.episode_length != 0 {
                return Err(Error::Config(format!(
                    "cannot continue training mid-episode at step {}",
                    self.step
                )));
            }
            self.start_episode()?;
        }
        let epsilon = epsilon_at(&self.config, self.step);
        let done = (self.step + 1) % self.config.episode_length == 0;
        let ep = self.episode.as_mut().expect("episode started above");
        let sim = &ep.world.config.clone();
        let frames = std::mem::take(&mut ep.frames);
        let obs: Vec<EncodedObservation> = frames.iter().map(|f| encode_observation(f, sim)).collect();
        let mut controller = RlController::new(&self.online, epsilon, self.hold_ticks);
        let report = ep.world.advance_with_frames(frames, &mut controller)?;
        let next_frames = ep.world.sense_all();
        let next_obs: Vec<EncodedObservation> = next_frames.iter().map(|f| encode_observation(f, sim)).collect();
        let nearest = nearest_true_distances(&ep.world, self.config.proximity_radii * sim.robot_radius);
        let threshold = self.config.deadlock_displacement_radii * sim.robot_radius;
        for (i, robot) in ep.world.robots.iter().enumerate() {
            let action = match robot.controller_state {
                ControllerState::Rl(s) => s.action.unwrap_or(ActionId::Standstill),
                _ => ActionId::Standstill,
            };
            ep.trackers[i].record(robot.position, action.is_moving());
            let reward = compute_reward(
                &ep.prev_metrics,
                &report.metrics,
                robot.swarm,
                ep.trackers[i].deadlocked(threshold),
                nearest[i],
                sim,
                &self.config,
            );
            ep.returns[i] += reward;
            self.replay.push(Transition {
                obs: obs[i],
                action,
                reward: reward as f32,
                next_obs: next_obs[i],
                done,
            });
        }
        ep.frames = next_frames;
        ep.prev_metrics = report.metrics;
        let episode_return_mean = ep.returns.iter().sum::<f64>() / ep.returns.len() as f64;

        let loss = if self.replay.len() >= self.config.warmup_transitions.max(1) {
            let batch = self.replay.sample(self.config.batch_size, &mut self.rng);
            let options = TdOptions {
                gamma: self.config.gamma,
                huber_delta: self.config.huber_delta,
                dropout_rate: self.config.dropout_rate,
            };
            let l = td_update(&mut self.online, &self.target, &batch, &mut self.adam, options, &mut self.rng)?;
            self.updates += 1;
            Some(l)
        } else {
            None
        };
        let row = TrainLogRow {
            step: self.step,
            epsilon,
            loss,
            episode_return_mean,
            coverage_a: report.metrics.coverage_a,
            coverage_b: report.metrics.coverage_b,
            mixing: report.metrics.mixing,
        };
        self.step += 1;
        if self.step % self.config.target_sync_interval == 0 {
            self.target = sync_target(&self.online);
            self.syncs += 1;
        }
        if done {
            self.episode = None;
        }
        Ok(row)
    }

    /// Trains until `total_steps`, saving `ckpt_<step>.json` every
    /// `checkpoint_interval` steps and `final.json` at the end when a
    /// directory is given. `on_step` sees the trainer after every tick.
    pub fn run(
        &mut self,
        checkpoint_dir: Option<&Path>,
        mut on_step: impl FnMut(&Trainer, &TrainLogRow),
    ) -> Result<Option<PathBuf>, Error> {
        if let Some(dir) = checkpoint_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        while self.step < self.config.total_steps {
            let row = self.step_once()?;
            on_step(self, &row);
            if let Some(dir) = checkpoint_dir {
                if self.step % self.config.checkpoint_interval == 0 {
                    save_checkpoint(&self.checkpoint(), &dir.join(format!("ckpt_{:08}.json", self.step)))?;
                }
            }
        }
        match checkpoint_dir {
            Some(dir) => {
                let path = dir.join("final.json");
                save_checkpoint(&self.checkpoint(), &path)?;
                Ok(Some(path))
            }
            None => Ok(None),
        }
    }

    /// Full resumable state as a checkpoint document.
    pub fn checkpoint(&self) -> CheckpointFile {
        let hyper = serde_json::json!({
            "training": self.config,
            "sim": self.sim,
            "scenario": self.scenario,
            "seed": self.seed,
        });
        let mut file = CheckpointFile::new(&self.online, hyper);
        let state = TrainingStateRecord {
            step: self.step,
            syncs: self.syncs,
            updates: self.updates,
            target: crate::qnet::ParamsRecord::from_params(&self.target),
            adam_step: self.adam.step_count(),
            adam_first: encode_tensors("m", self.adam.first_moments()),
            adam_second: encode_tensors("v", self.adam.second_moments()),
            replay: ReplayRecord::from_buffer(&self.replay),
            rng: self.rng.clone(),
        };
        file.training = Some(serde_json::to_value(state).expect("training state serializes"));
        file
    }

    /// Rebuilds a trainer from a checkpoint written by [`Trainer::checkpoint`].
    /// Only `total_steps` and `checkpoint_interval` may differ from the stored
    /// hyperparameters; the stored ones win for everything else.
    pub fn from_checkpoint(file: &CheckpointFile, total_steps: Option<u64>) -> Result<Self, Error> {
        let hyper = &file.hyperparameters;
        let field = |k: &str| {
            hyper
                .get(k)
                .cloned()
                .ok_or_else(|| CheckpointError::CorruptEncoding(format!("hyperparameters lack {k}")))
        };
        let parse_err = |e: serde_json::Error| CheckpointError::CorruptEncoding(e.to_string());
        let mut config: TrainingConfig = serde_json::from_value(field("training")?).map_err(parse_err)?;
        let sim: SimConfig = serde_json::from_value(field("sim")?).map_err(parse_err)?;
        let scenario: ScenarioSpec = serde_json::from_value(field("scenario")?).map_err(parse_err)?;
        let seed: u64 = serde_json::from_value(field("seed")?).map_err(parse_err)?;
        if let Some(t) = total_steps {
            config.total_steps = t;
        }
        let state: TrainingStateRecord = serde_json::from_value(
            file.training
                .clone()
                .ok_or_else(|| CheckpointError::CorruptEncoding("no training state in checkpoint".into()))?,
        )
        .map_err(parse_err)?;
        if state.step % config.episode_length != 0 {
            return Err(Error::Config(format!(
                "checkpoint step {} is not an episode boundary",
                state.step
            )));
        }
        let online = file.params()?;
        let target = state.target.to_params()?;
        let shapes: Vec<Vec<usize>> = online.tensors.iter().map(|t| t.shape().to_vec()).collect();
        let adam = Adam::from_parts(
            adam_config(&config),
            decode_tensors("m", &state.adam_first, &shapes)?,
            decode_tensors("v", &state.adam_second, &shapes)?,
            state.adam_step,
        )?;
        let replay = state.replay.to_buffer()?;
        let hold_ticks = sim.seconds_to_ticks(config.walling_timer_s);
        Ok(Self {
            online,
            target,
            adam,
            replay,
            rng: state.rng,
            step: state.step,
            syncs: state.syncs,
            updates: state.updates,
            hold_ticks,
            episode: None,
            config,
            sim,
            scenario,
            seed,
        })
    }
}

fn adam_config(config: &TrainingConfig) -> AdamConfig {
    AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    }
}

fn encode_tensors(prefix: &str, ts: &[Tensor<f32>]) -> Vec<EncodedTensor> {
    ts.iter()
        .enumerate()
        .map(|(i, t)| EncodedTensor::encode(&format!("{prefix}{i}"), t))
        .collect()
}

fn decode_tensors(prefix: &str, recs: &[EncodedTensor], shapes: &[Vec<usize>]) -> Result<Vec<Tensor<f32>>, Error> {
    if recs.len() != shapes.len() {
        return Err(CheckpointError::ShapeMismatch(format!(
            "{} optimizer tensors for {} parameters",
            recs.len(),
            shapes.len()
        ))
        .into());
    }
    recs.iter()
        .zip(shapes)
        .enumerate()
        .map(|(i, (r, s))| Ok(r.decode(&format!("{prefix}{i}"), s)?))
        .collect()
}

/// True distance from each robot to its nearest neighbor, when one lies within `range`.
fn nearest_true_distances(world: &WorldState, range: f64) -> Vec<Option<f64>> {
    let positions = world.positions();
    let c = &world.config;
    let cell = SpatialGrid::cell_for_density(
        positions.len(),
        crate::sim::SENSING_CELL_OCCUPANCY,
        c.arena_width,
        c.arena_height,
        2.0 * c.robot_radius,
        c.sensing_range,
    );
    let grid = SpatialGrid::build(&positions, c.arena_width, c.arena_height, cell);
    let mut out = Vec::with_capacity(1);
    (0..positions.len())
        .map(|i| {
            grid.nearest(&positions, i, 1, range, &mut out);
            out.first().map(|&(d2, _)| d2.sqrt())
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainingStateRecord {
    step: u64,
    syncs: u64,
    updates: u64,
    target: crate::qnet::ParamsRecord,
    adam_step: u64,
    adam_first: Vec<EncodedTensor>,
    adam_second: Vec<EncodedTensor>,
    replay: ReplayRecord,
    rng: ChaCha8Rng,
}

/// Replay contents, oldest first, as packed base64 columns.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ReplayRecord {
    capacity: usize,
    len: usize,
    obs: String,
    obs_mask: String,
    next_obs: String,
    next_mask: String,
    actions: String,
    rewards: String,
    dones: String,
}

impl ReplayRecord {
    fn from_buffer(b: &ReplayBuffer) -> Self {
        let mut obs = Vec::new();
        let mut next = Vec::new();
        let mut obs_mask = Vec::new();
        let mut next_mask = Vec::new();
        let mut actions = Vec::new();
        let mut rewards = Vec::new();
        let mut dones = Vec::new();
        for t in b.iter_oldest_first() {
            obs.extend(t.obs.tokens.iter().flatten());
            next.extend(t.next_obs.tokens.iter().flatten());
            obs_mask.push(mask_bits(&t.obs.mask));
            next_mask.push(mask_bits(&t.next_obs.mask));
            actions.push(t.action as u8);
            rewards.push(t.reward);
            dones.push(t.done as u8);
        }
        Self {
            capacity: b.capacity,
            len: b.len(),
            obs: encode_f32s(&obs),
            obs_mask: encode_bytes(&obs_mask),
            next_obs: encode_f32s(&next),
            next_mask: encode_bytes(&next_mask),
            actions: encode_bytes(&actions),
            rewards: encode_f32s(&rewards),
            dones: encode_bytes(&dones),
        }
    }

    fn to_buffer(&self) -> Result<ReplayBuffer, CheckpointError> {
        let per = FRAME_SIZE * TOKEN_FEATURES;
        let obs = decode_f32s(&self.obs)?;
        let next = decode_f32s(&self.next_obs)?;
        let obs_mask = decode_bytes(&self.obs_mask)?;
        let next_mask = decode_bytes(&self.next_mask)?;
        let actions = decode_bytes(&self.actions)?;
        let rewards = decode_f32s(&self.rewards)?;
        let dones = decode_bytes(&self.dones)?;
        let n = self.len;
        if obs.len() != n * per
            || next.len() != n * per
            || [obs_mask.len(), next_mask.len(), actions.len(), rewards.len(), dones.len()]
                .iter()
                .any(|&l| l != n)
            || n > self.capacity
        {
            return Err(CheckpointError::ShapeMismatch("replay columns disagree in length".into()));
        }
        let mut b = ReplayBuffer::new(self.capacity);
        for i in 0..n {
            let action = ActionId::from_index(actions[i] as usize)
                .ok_or_else(|| CheckpointError::CorruptEncoding(format!("bad action {}", actions[i])))?;
            b.push(Transition {
                obs: unpack_obs(&obs[i * per..(i + 1) * per], obs_mask[i]),
                action,
                reward: rewards[i],
                next_obs: unpack_obs(&next[i * per..(i + 1) * per], next_mask[i]),
                done: dones[i] != 0,
            });
        }
        Ok(b)
    }
}

fn mask_bits(mask: &[bool; FRAME_SIZE]) -> u8 {
    mask.iter().enumerate().fold(0u8, |acc, (i, &m)| acc | ((m as u8) << i))
}

fn unpack_obs(values: &[f32], bits: u8) -> EncodedObservation {
    let mut o = EncodedObservation {
        tokens: [[0.0; TOKEN_FEATURES]; FRAME_SIZE],
        mask: [false; FRAME_SIZE],
    };
    for i in 0..FRAME_SIZE {
        o.tokens[i].copy_from_slice(&values[i * TOKEN_FEATURES..(i + 1) * TOKEN_FEATURES]);
        o.mask[i] = bits & (1 << i) != 0;
    }
    o
}

/// Metrics of `episodes` ε = 0 evaluation runs of a policy, one stream per
/// episode. Episode `e` uses world seed `seed_base + e`.
pub fn evaluate_policy(
    params: &NetworkParameters,
    scenario: &ScenarioSpec,
    sim: &SimConfig,
    hold_ticks: u32,
    episodes: usize,
    steps: u64,
    seed_base: u64,
) -> Result<Vec<Vec<TickMetrics>>, Error> {
    (0..episodes)
        .map(|e| {
            let cfg = SimConfig {
                seed: seed_base.wrapping_add(e as u64),
                ..sim.clone()
            };
            let mut world = init_world(scenario, &cfg)?;
            let mut controller = RlController::new(params, 0.0, hold_ticks);
            (0..steps).map(|_| crate::sim::tick(&mut world, &mut controller)).collect()
        })
        .collect()
}
