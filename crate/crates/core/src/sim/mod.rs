//! The discrete-time world: robots, sensing, motion, overlap resolution and
//! the per-tick loop.
//!
//! Every tick senses all robots against the tick-start snapshot, asks the
//! controller for one decision per robot, applies the motions in ascending id
//! order, pushes overlapping robots apart and finally computes the metrics.
//! All randomness comes from one ChaCha stream seeded by `SimConfig::seed`.

pub mod motion;
pub mod sensing;
pub mod spatial;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::fsm::ControllerFsmState;
use crate::geometry::Point2;
use crate::metrics::{tick_metrics, TickMetrics};
use crate::qnet::RlRobotState;
use crate::scenario::{place, ScenarioSpec};
use crate::Error;

pub use motion::{apply_motion, clamp_to_arena, crw_delta, crw_step, wrap_angle};
pub use sensing::{NeighborObservation, ObservationFrame, FRAME_SIZE};
pub use spatial::SpatialGrid;

/// Overlap resolution passes per tick.
pub const SAFETY_ITERATIONS: usize = 8;

/// Extra separation per push, as a fraction of the contact distance.
const SAFETY_SLACK: f64 = 0.01;
/// Target robots per cell for the sensing grid.
pub(crate) const SENSING_CELL_OCCUPANCY: f64 = 4.0;
/// Target robots per cell for the overlap grid.
const OVERLAP_CELL_OCCUPANCY: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Swarm {
    A,
    B,
}

impl Swarm {
    pub fn label(self) -> &'static str {
        match self {
            Swarm::A => "A",
            Swarm::B => "B",
        }
    }
}

/// Per-robot payload owned by whichever controller drives the robot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ControllerState {
    /// Not yet touched by a controller.
    Idle,
    Fsm(ControllerFsmState),
    Rl(RlRobotState),
}

impl ControllerState {
    /// Short label used in snapshot files.
    pub fn label(&self) -> &'static str {
        match self {
            ControllerState::Idle => "idle",
            ControllerState::Fsm(s) => s.state.label(),
            ControllerState::Rl(s) => s.label(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub id: usize,
    pub swarm: Swarm,
    pub position: Point2,
    /// Radians in `[-π, π)`.
    pub heading: f64,
    pub commanded_speed: f64,
    pub controller_state: ControllerState,
}

/// Speed in arena units per tick and a body-frame turn applied before moving.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MotionCommand {
    pub speed: f64,
    pub heading_delta: f64,
}

impl MotionCommand {
    pub const STOP: MotionCommand = MotionCommand {
        speed: 0.0,
        heading_delta: 0.0,
    };
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub state: ControllerState,
    pub command: MotionCommand,
}

/// Read-only view of the tick-start world handed to a controller.
pub struct DecisionContext<'a> {
    pub config: &'a SimConfig,
    pub robots: &'a [RobotState],
    /// One frame per robot, indexed by id.
    pub frames: &'a [ObservationFrame],
    pub step: u64,
}

pub trait Controller {
    /// One decision per robot, in id order.
    fn decide(
        &mut self,
        ctx: &DecisionContext<'_>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Decision>, Error>;
}

/// Keeps every robot still. Useful as a baseline and in tests.
#[derive(Debug, Clone, Copy, Default)]
pub struct StationaryController;

impl Controller for StationaryController {
    fn decide(&mut self, ctx: &DecisionContext<'_>, _rng: &mut ChaCha8Rng) -> Result<Vec<Decision>, Error> {
        Ok(ctx
            .robots
            .iter()
            .map(|r| Decision {
                state: r.controller_state,
                command: MotionCommand::STOP,
            })
            .collect())
    }
}

/// Sensing frames and metrics produced by one tick.
#[derive(Debug, Clone)]
pub struct TickReport {
    pub metrics: TickMetrics,
    /// The frames the controller decided on, indexed by robot id.
    pub frames: Vec<ObservationFrame>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub config: SimConfig,
    pub robots: Vec<RobotState>,
    /// Ticks completed so far.
    pub step: u64,
    n_a: usize,
    rng: ChaCha8Rng,
}

/// Places both swarms and draws initial headings from the seeded stream.
pub fn init_world(scenario: &ScenarioSpec, config: &SimConfig) -> Result<WorldState, Error> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (a, b) = place(scenario, config, &mut rng)?;
    let n_a = a.len();
    let robots = a
        .into_iter()
        .map(|p| (Swarm::A, p))
        .chain(b.into_iter().map(|p| (Swarm::B, p)))
        .enumerate()
        .map(|(id, (swarm, position))| RobotState {
            id,
            swarm,
            position,
            heading: wrap_angle(rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)),
            commanded_speed: 0.0,
            controller_state: ControllerState::Idle,
        })
        .collect();
    Ok(WorldState {
        config: config.clone(),
        robots,
        step: 0,
        n_a,
        rng,
    })
}

impl WorldState {
    /// Builds a world from explicit robots, e.g. for scripted tests. Robots
    /// are re-numbered by position in the list.
    pub fn from_robots(config: SimConfig, mut robots: Vec<RobotState>, seed: u64) -> Result<Self, Error> {
        config.validate()?;
        robots.sort_by_key(|r| r.swarm == Swarm::B);
        for (i, r) in robots.iter_mut().enumerate() {
            r.id = i;
        }
        let n_a = robots.iter().filter(|r| r.swarm == Swarm::A).count();
        Ok(Self {
            config,
            robots,
            step: 0,
            n_a,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn n_a(&self) -> usize {
        self.n_a
    }

    pub fn n_b(&self) -> usize {
        self.robots.len() - self.n_a
    }

    pub fn positions(&self) -> Vec<Point2> {
        self.robots.iter().map(|r| r.position).collect()
    }

    pub fn positions_of(&self, swarm: Swarm) -> Vec<Point2> {
        let range = match swarm {
            Swarm::A => 0..self.n_a,
            Swarm::B => self.n_a..self.robots.len(),
        };
        self.robots[range].iter().map(|r| r.position).collect()
    }

    pub fn robot(&self, id: usize) -> Result<&RobotState, Error> {
        self.robots.get(id).ok_or(Error::UnknownRobot(id))
    }

    pub fn metrics(&self) -> TickMetrics {
        tick_metrics(
            self.step,
            &self.positions_of(Swarm::A),
            &self.positions_of(Swarm::B),
            self.config.arena_width,
            self.config.arena_height,
        )
    }

    /// Mutable access to the world's random stream.
    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    fn sensing_grid(&self, positions: &[Point2]) -> SpatialGrid {
        let c = &self.config;
        let cell = SpatialGrid::cell_for_density(
            positions.len(),
            SENSING_CELL_OCCUPANCY,
            c.arena_width,
            c.arena_height,
            2.0 * c.robot_radius,
            c.sensing_range,
        );
        SpatialGrid::build(positions, c.arena_width, c.arena_height, cell)
    }

    /// Frames for every robot in id order, drawing noise from the world stream.
    pub fn sense_all(&mut self) -> Vec<ObservationFrame> {
        let positions = self.positions();
        let grid = self.sensing_grid(&positions);
        let mut scratch = Vec::with_capacity(FRAME_SIZE);
        (0..self.robots.len())
            .map(|i| {
                sensing::sense_one(
                    &self.robots,
                    &positions,
                    &grid,
                    i,
                    &self.config,
                    &mut scratch,
                    &mut self.rng,
                )
            })
            .collect()
    }

    /// Frame for a single robot.
    pub fn sense(&mut self, id: usize) -> Result<ObservationFrame, Error> {
        self.robot(id)?;
        let positions = self.positions();
        let grid = self.sensing_grid(&positions);
        let mut scratch = Vec::with_capacity(FRAME_SIZE);
        Ok(sensing::sense_one(
            &self.robots,
            &positions,
            &grid,
            id,
            &self.config,
            &mut scratch,
            &mut self.rng,
        ))
    }

    /// Runs one tick and returns the frames that were used alongside the metrics.
    pub fn advance(&mut self, controller: &mut dyn Controller) -> Result<TickReport, Error> {
        let frames = self.sense_all();
        self.advance_with_frames(frames, controller)
    }

    /// Runs one tick on frames already sensed from the current state.
    pub fn advance_with_frames(
        &mut self,
        frames: Vec<ObservationFrame>,
        controller: &mut dyn Controller,
    ) -> Result<TickReport, Error> {
        if frames.len() != self.robots.len() {
            return Err(Error::Config(format!(
                "{} frames for {} robots",
                frames.len(),
                self.robots.len()
            )));
        }
        let decisions = {
            let ctx = DecisionContext {
                config: &self.config,
                robots: &self.robots,
                frames: &frames,
                step: self.step,
            };
            controller.decide(&ctx, &mut self.rng)?
        };
        if decisions.len() != self.robots.len() {
            return Err(Error::Config(format!(
                "controller returned {} decisions for {} robots",
                decisions.len(),
                self.robots.len()
            )));
        }
        for (robot, d) in self.robots.iter_mut().zip(&decisions) {
            robot.controller_state = d.state;
            apply_motion(robot, d.command, &self.config, &mut self.rng);
        }
        safety_resolve(self);
        self.step += 1;
        Ok(TickReport {
            metrics: self.metrics(),
            frames,
        })
    }
}

/// Advances the world by one tick.
pub fn tick(world: &mut WorldState, controller: &mut dyn Controller) -> Result<TickMetrics, Error> {
    Ok(world.advance(controller)?.metrics)
}

/// Pushes every overlapping pair apart along the line of centres and
/// re-clamps to the arena, for at most [`SAFETY_ITERATIONS`] passes.
/// Returns the number of passes that found an overlap.
pub fn safety_resolve(world: &mut WorldState) -> usize {
    let mut positions = world.positions();
    let passes = resolve_overlaps(&mut positions, &world.config);
    for (r, p) in world.robots.iter_mut().zip(positions) {
        r.position = p;
    }
    passes
}

pub(crate) fn resolve_overlaps(positions: &mut [Point2], config: &SimConfig) -> usize {
    let min_gap = 2.0 * config.robot_radius;
    let cell = SpatialGrid::cell_for_density(
        positions.len(),
        OVERLAP_CELL_OCCUPANCY,
        config.arena_width,
        config.arena_height,
        min_gap,
        config.sensing_range.max(min_gap),
    );
    let mut pairs = Vec::new();
    let mut passes = 0;
    // Only robots pushed in the previous pass can be part of a new overlap.
    let mut active = vec![true; positions.len()];
    for _ in 0..SAFETY_ITERATIONS {
        let grid = SpatialGrid::build(positions, config.arena_width, config.arena_height, cell);
        grid.close_pairs_touching(positions, min_gap, &active, &mut pairs);
        if pairs.is_empty() {
            break;
        }
        passes += 1;
        active.fill(false);
        for &(i, j) in &pairs {
            let (pi, pj) = (positions[i], positions[j]);
            let d = pi.dist(pj);
            if d >= min_gap {
                continue;
            }
            let (ux, uy) = if d > 1e-12 {
                ((pj.x - pi.x) / d, (pj.y - pi.y) / d)
            } else {
                // Coincident centres: separate along a direction fixed by the ids.
                let a = (i * 7919 + j * 104_729) as f64;
                (a.cos(), a.sin())
            };
            // A small overshoot keeps neighbouring pushes from reopening the gap.
            let push = 0.5 * (min_gap - d) + SAFETY_SLACK * min_gap;
            active[i] = true;
            active[j] = true;
            positions[i] = clamp_to_arena(Point2::new(pi.x - ux * push, pi.y - uy * push), config);
            positions[j] = clamp_to_arena(Point2::new(pj.x + ux * push, pj.y + uy * push), config);
        }
    }
    passes
}
