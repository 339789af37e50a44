//! Two-swarm separation simulator.
//!
//! Robots of two swarms move in a rectangular arena, sense their seven nearest
//! neighbors through noisy range and bearing readings, and are driven either
//! by a hand-written walling state machine ([`fsm`]) or by a shared attention
//! Q-network ([`qnet`]) trained with DQN ([`train`]). Coverage and mixing of
//! the two swarms' convex hulls ([`metrics`]) measure how well they separate.
//! [`harness`] runs replicated experiments and writes CSV and SVG output.

pub mod config;
pub mod fsm;
pub mod geometry;
pub mod harness;
pub mod metrics;
pub mod qnet;
pub mod scenario;
pub mod sim;
pub mod train;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{RunConfig, SimConfig};
pub use geometry::{ConvexPolygon, GeometryError, Point2};
pub use metrics::TickMetrics;
pub use scenario::ScenarioSpec;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error("unknown robot id {0}")]
    UnknownRobot(usize),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Kernel(#[from] walling_kernel::KernelError),
    #[error(transparent)]
    Checkpoint(#[from] qnet::CheckpointError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("plot error: {0}")]
    Plot(String),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
