//! The five initial configurations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::geometry::Point2;
use crate::Error;

/// Rejection attempts per robot before a placement is declared infeasible.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    /// 1: opposite edge bands. 2: A in a band near the left, B at the right
    /// edge. 3: uniform everywhere. 4: concentric circles, B inside. 5: both
    /// swarms in a central box.
    pub case_id: u8,
    pub n_a: usize,
    pub n_b: usize,
    /// Width of the edge bands as a fraction of arena width.
    pub band_fraction: f64,
    /// Case 2: centre of swarm A's band, as a fraction of arena width from the left.
    pub offset_fraction: f64,
    /// Case 4 radii, as fractions of arena width.
    pub inner_radius: f64,
    pub outer_radius: f64,
    /// Case 5: side of the central box as a fraction of the shorter arena side.
    pub center_box_fraction: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            case_id: 1,
            n_a: 30,
            n_b: 30,
            band_fraction: 1.0 / 16.0,
            offset_fraction: 1.0 / 8.0,
            inner_radius: 0.15,
            outer_radius: 0.30,
            center_box_fraction: 0.2,
        }
    }
}

impl ScenarioSpec {
    pub fn new(case_id: u8, n_a: usize, n_b: usize) -> Self {
        Self {
            case_id,
            n_a,
            n_b,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        if !(1..=5).contains(&self.case_id) {
            return Err(Error::Config(format!(
                "case_id must be 1..=5, got {}",
                self.case_id
            )));
        }
        if self.n_a == 0 || self.n_b == 0 {
            return Err(Error::Config("each swarm needs at least one robot".into()));
        }
        for (name, v) in [
            ("band_fraction", self.band_fraction),
            ("offset_fraction", self.offset_fraction),
            ("inner_radius", self.inner_radius),
            ("outer_radius", self.outer_radius),
            ("center_box_fraction", self.center_box_fraction),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if self.inner_radius >= self.outer_radius {
            return Err(Error::Config("inner_radius must be below outer_radius".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Region {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

/// Initial positions of swarm A and swarm B.
pub fn place<R: Rng + ?Sized>(
    spec: &ScenarioSpec,
    config: &SimConfig,
    rng: &mut R,
) -> Result<(Vec<Point2>, Vec<Point2>), Error> {
    spec.validate()?;
    let (w, h, r) = (config.arena_width, config.arena_height, config.robot_radius);
    let full_y = (r, h - r);
    let band = spec.band_fraction * w;
    let region = |x0: f64, x1: f64, (y0, y1): (f64, f64)| Region {
        x0: x0.max(r),
        x1: x1.min(w - r),
        y0: y0.max(r),
        y1: y1.min(h - r),
    };

    if spec.case_id == 4 {
        return place_circles(spec, config, rng);
    }

    let (ra, rb) = match spec.case_id {
        1 => (region(0.0, band, full_y), region(w - band, w, full_y)),
        2 => {
            let c = spec.offset_fraction * w;
            (
                region(c - band / 2.0, c + band / 2.0, full_y),
                region(w - band, w, full_y),
            )
        }
        3 => (region(0.0, w, full_y), region(0.0, w, full_y)),
        5 => {
            let side = spec.center_box_fraction * w.min(h);
            let (cx, cy) = (w / 2.0, h / 2.0);
            let b = region(cx - side / 2.0, cx + side / 2.0, (cy - side / 2.0, cy + side / 2.0));
            (b, b)
        }
        _ => unreachable!("validated"),
    };
    let mut placed: Vec<Point2> = Vec::with_capacity(spec.n_a + spec.n_b);
    for (count, reg) in [(spec.n_a, ra), (spec.n_b, rb)] {
        if reg.x1 < reg.x0 || reg.y1 < reg.y0 {
            return Err(Error::Scenario(format!(
                "case {} placement region is empty for this arena",
                spec.case_id
            )));
        }
        for _ in 0..count {
            let p = sample_free(&placed, reg, 2.0 * r, rng).ok_or_else(|| {
                Error::Scenario(format!(
                    "could not place {} + {} robots for case {} without overlap",
                    spec.n_a, spec.n_b, spec.case_id
                ))
            })?;
            placed.push(p);
        }
    }
    let b = placed.split_off(spec.n_a);
    Ok((placed, b))
}

fn sample_free<R: Rng + ?Sized>(
    placed: &[Point2],
    reg: Region,
    min_dist: f64,
    rng: &mut R,
) -> Option<Point2> {
    let min_sq = min_dist * min_dist;
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let p = Point2::new(
            uniform(rng, reg.x0, reg.x1),
            uniform(rng, reg.y0, reg.y1),
        );
        if placed.iter().all(|q| q.dist_sq(p) >= min_sq) {
            return Some(p);
        }
    }
    None
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn place_circles<R: Rng + ?Sized>(
    spec: &ScenarioSpec,
    config: &SimConfig,
    rng: &mut R,
) -> Result<(Vec<Point2>, Vec<Point2>), Error> {
    let (w, h, r) = (config.arena_width, config.arena_height, config.robot_radius);
    let (cx, cy) = (w / 2.0, h / 2.0);
    let ring = |n: usize, radius: f64, rng: &mut R| -> Result<Vec<Point2>, Error> {
        if radius + r > cx.min(cy) {
            return Err(Error::Scenario(format!(
                "circle of radius {radius} does not fit in the arena"
            )));
        }
        if n > 1 {
            let chord = 2.0 * radius * (std::f64::consts::PI / n as f64).sin();
            if chord < 2.0 * r {
                return Err(Error::Scenario(format!(
                    "{n} robots do not fit on a circle of radius {radius}"
                )));
            }
        }
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        Ok((0..n)
            .map(|i| {
                let a = phase + std::f64::consts::TAU * i as f64 / n as f64;
                Point2::new(cx + radius * a.cos(), cy + radius * a.sin())
            })
            .collect())
    };
    let inner = spec.inner_radius * w;
    let outer = spec.outer_radius * w;
    if outer - inner < 2.0 * r {
        return Err(Error::Scenario("circles closer than one robot diameter".into()));
    }
    let b = ring(spec.n_b, inner, rng)?;
    let a = ring(spec.n_a, outer, rng)?;
    Ok((a, b))
}
