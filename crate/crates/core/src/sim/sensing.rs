//! Seven-nearest-neighbor noisy range and bearing sensing.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::sim::motion::{gaussian, wrap_angle};
use crate::sim::spatial::SpatialGrid;
use crate::sim::RobotState;

/// Number of neighbor slots in every observation frame.
pub const FRAME_SIZE: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborObservation {
    /// Noisy range, clamped at zero.
    pub distance: f64,
    /// Noisy bearing in the observer's body frame, in `[-π, π)`.
    pub aoa: f64,
    /// True for a robot of the observer's own swarm.
    pub nestmate: bool,
    pub valid: bool,
    /// Simulator-side identity of the sensed robot. Controllers may only use
    /// it for the local state broadcast within the encounter radius.
    pub neighbor: Option<usize>,
}

impl NeighborObservation {
    pub fn padding(sensing_range: f64) -> Self {
        Self {
            distance: sensing_range,
            aoa: 0.0,
            nestmate: false,
            valid: false,
            neighbor: None,
        }
    }
}

/// Valid entries first, ordered by true distance (ties by lower id).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationFrame {
    pub neighbors: [NeighborObservation; FRAME_SIZE],
}

impl ObservationFrame {
    pub fn empty(sensing_range: f64) -> Self {
        Self {
            neighbors: [NeighborObservation::padding(sensing_range); FRAME_SIZE],
        }
    }

    pub fn valid(&self) -> impl Iterator<Item = &NeighborObservation> {
        self.neighbors.iter().filter(|n| n.valid)
    }

    pub fn valid_count(&self) -> usize {
        self.valid().count()
    }

    /// First valid entry of the requested kind. Entries are ordered by true
    /// distance, so this is the closest one as far as the sensor can tell.
    pub fn nearest(&self, nestmate: bool) -> Option<&NeighborObservation> {
        self.valid().find(|n| n.nestmate == nestmate)
    }

    /// Smallest noisy range among valid entries of the requested kind.
    pub fn min_distance(&self, nestmate: bool) -> Option<f64> {
        self.valid()
            .filter(|n| n.nestmate == nestmate)
            .map(|n| n.distance)
            .min_by(|a, b| a.total_cmp(b))
    }
}

/// Senses robot `query` given a spatial index over all positions.
pub(crate) fn sense_one<R: Rng + ?Sized>(
    robots: &[RobotState],
    positions: &[crate::geometry::Point2],
    grid: &SpatialGrid,
    query: usize,
    config: &SimConfig,
    scratch: &mut Vec<(f64, usize)>,
    rng: &mut R,
) -> ObservationFrame {
    grid.nearest(positions, query, FRAME_SIZE, config.sensing_range, scratch);
    let me = &robots[query];
    let mut frame = ObservationFrame::empty(config.sensing_range);
    for (slot, &(_, j)) in frame.neighbors.iter_mut().zip(scratch.iter()) {
        let other = &robots[j];
        let dx = other.position.x - me.position.x;
        let dy = other.position.y - me.position.y;
        let distance = (me.position.dist(other.position) + gaussian(rng, config.noise_sigma_d)).max(0.0);
        let aoa = wrap_angle(dy.atan2(dx) - me.heading + gaussian(rng, config.noise_sigma_theta));
        *slot = NeighborObservation {
            distance,
            aoa,
            nestmate: other.swarm == me.swarm,
            valid: true,
            neighbor: Some(j),
        };
    }
    frame
}
