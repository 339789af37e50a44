//! Simulation parameters and the on-disk run configuration.
//!
//! A config file is TOML with optional `[sim]`, `[training]` and `[scenario]`
//! tables whose keys are exactly the field names of [`SimConfig`],
//! [`TrainingConfig`] and [`ScenarioSpec`]. Missing keys keep their defaults;
//! unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::scenario::ScenarioSpec;
use crate::train::TrainingConfig;
use crate::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub arena_width: f64,
    pub arena_height: f64,
    /// Seconds per tick.
    pub tick_duration: f64,
    pub robot_radius: f64,
    /// Arena units per tick.
    pub speed: f64,
    pub sensing_range: f64,
    pub encounter_radius: f64,
    pub safe_dist: f64,
    /// Standard deviation of the per-tick heading increment (radians).
    pub crw_sigma: f64,
    pub noise_sigma_d: f64,
    pub noise_sigma_theta: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            arena_width: 1000.0,
            arena_height: 1000.0,
            tick_duration: 0.1,
            robot_radius: 5.0,
            speed: 2.0,
            sensing_range: 150.0,
            encounter_radius: 120.0,
            safe_dist: 150.0,
            crw_sigma: 0.3,
            noise_sigma_d: 2.0,
            noise_sigma_theta: 0.05,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), Error> {
        let lengths = [
            ("arena_width", self.arena_width),
            ("arena_height", self.arena_height),
            ("robot_radius", self.robot_radius),
            ("speed", self.speed),
            ("sensing_range", self.sensing_range),
            ("encounter_radius", self.encounter_radius),
            ("safe_dist", self.safe_dist),
            ("tick_duration", self.tick_duration),
        ];
        for (name, v) in lengths {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("crw_sigma", self.crw_sigma),
            ("noise_sigma_d", self.noise_sigma_d),
            ("noise_sigma_theta", self.noise_sigma_theta),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.encounter_radius > self.sensing_range {
            return Err(Error::Config(
                "encounter_radius must not exceed sensing_range".into(),
            ));
        }
        if self.safe_dist < self.encounter_radius {
            return Err(Error::Config(
                "safe_dist must be at least encounter_radius".into(),
            ));
        }
        if 2.0 * self.robot_radius >= self.arena_width.min(self.arena_height) {
            return Err(Error::Config("arena too small for a single robot".into()));
        }
        Ok(())
    }

    pub fn arena_area(&self) -> f64 {
        self.arena_width * self.arena_height
    }

    /// Converts a duration in seconds to whole ticks (rounded).
    pub fn seconds_to_ticks(&self, seconds: f64) -> u32 {
        (seconds / self.tick_duration).round().max(0.0) as u32
    }
}

/// Everything a config file may override.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub training: TrainingConfig,
    pub scenario: ScenarioSpec,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, Error> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.sim.validate()?;
        cfg.training.validate()?;
        cfg.scenario.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }
}
