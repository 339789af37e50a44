//! Unicycle kinematics, the correlated random walk and the arena boundary rule.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::SimConfig;
use crate::geometry::Point2;
use crate::sim::{MotionCommand, RobotState};

/// Wraps an angle into `[-π, π)`.
pub fn wrap_angle(a: f64) -> f64 {
    if (-PI..PI).contains(&a) {
        return a;
    }
    let mut w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        w -= 2.0 * PI;
    }
    if w < -PI {
        w = -PI;
    }
    w
}

/// One zero-mean normal draw with standard deviation `sigma`.
pub fn gaussian<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    sigma * z
}

/// Heading increment of a correlated random walk step.
pub fn crw_delta<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> f64 {
    gaussian(rng, config.crw_sigma)
}

/// Turns by the commanded delta, then moves forward at the commanded speed.
/// A step that would leave the inset arena is clamped to it and the heading
/// is redirected toward the arena centre (plus CRW noise), reflected so it
/// never points back through a wall the robot is touching.
pub fn apply_motion<R: Rng + ?Sized>(
    robot: &mut RobotState,
    command: MotionCommand,
    config: &SimConfig,
    rng: &mut R,
) {
    robot.heading = wrap_angle(robot.heading + command.heading_delta);
    robot.commanded_speed = command.speed;
    if command.speed == 0.0 {
        return;
    }
    let r = config.robot_radius;
    let (lo_x, hi_x) = (r, config.arena_width - r);
    let (lo_y, hi_y) = (r, config.arena_height - r);
    let nx = robot.position.x + command.speed * robot.heading.cos();
    let ny = robot.position.y + command.speed * robot.heading.sin();
    if (lo_x..=hi_x).contains(&nx) && (lo_y..=hi_y).contains(&ny) {
        robot.position = Point2::new(nx, ny);
        return;
    }
    let p = Point2::new(nx.clamp(lo_x, hi_x), ny.clamp(lo_y, hi_y));
    robot.position = p;
    let (cx, cy) = (config.arena_width / 2.0, config.arena_height / 2.0);
    let toward = (cy - p.y).atan2(cx - p.x) + gaussian(rng, config.crw_sigma);
    let (mut hx, mut hy) = (toward.cos(), toward.sin());
    if (nx < lo_x && hx < 0.0) || (nx > hi_x && hx > 0.0) {
        hx = -hx;
    }
    if (ny < lo_y && hy < 0.0) || (ny > hi_y && hy > 0.0) {
        hy = -hy;
    }
    robot.heading = wrap_angle(hy.atan2(hx));
}

/// A full-speed correlated random walk step.
pub fn crw_step<R: Rng + ?Sized>(robot: &RobotState, config: &SimConfig, rng: &mut R) -> RobotState {
    let mut next = robot.clone();
    let command = MotionCommand {
        speed: config.speed,
        heading_delta: crw_delta(config, rng),
    };
    apply_motion(&mut next, command, config, rng);
    next
}

/// Clamps a position into the arena inset by the robot radius.
pub fn clamp_to_arena(p: Point2, config: &SimConfig) -> Point2 {
    let r = config.robot_radius;
    Point2::new(
        p.x.clamp(r, config.arena_width - r),
        p.y.clamp(r, config.arena_height - r),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{ControllerState, Swarm};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn robot(x: f64, y: f64, heading: f64) -> RobotState {
        RobotState {
            id: 0,
            swarm: Swarm::A,
            position: Point2::new(x, y),
            heading,
            commanded_speed: 0.0,
            controller_state: ControllerState::Idle,
        }
    }

    #[test]
    fn wrap_stays_in_half_open_range() {
        assert_eq!(wrap_angle(PI), -PI);
        assert_eq!(wrap_angle(-PI), -PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        for k in -50..50 {
            let w = wrap_angle(k as f64 * 0.77);
            assert!((-PI..PI).contains(&w));
        }
    }

    #[test]
    fn noiseless_crw_moves_straight() {
        let cfg = SimConfig {
            crw_sigma: 0.0,
            ..SimConfig::default()
        };
        let next = crw_step(&robot(10.0, 10.0, 0.0), &cfg, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(next.position, Point2::new(12.0, 10.0));
        assert_eq!(next.heading, 0.0);
    }

    #[test]
    fn outward_step_at_each_wall_turns_inward() {
        let cfg = SimConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = cfg.robot_radius;
        let cases = [
            (r, 500.0, PI - 0.01, (1.0, 0.0)),
            (cfg.arena_width - r, 500.0, 0.0, (-1.0, 0.0)),
            (500.0, r, -PI / 2.0, (0.0, 1.0)),
            (500.0, cfg.arena_height - r, PI / 2.0, (0.0, -1.0)),
            (r, r, -3.0 * PI / 4.0, (1.0, 1.0)),
        ];
        for _ in 0..200 {
            for &(x, y, h, (ix, iy)) in &cases {
                let next = crw_step(&robot(x, y, h), &cfg, &mut rng);
                let (hx, hy) = (next.heading.cos(), next.heading.sin());
                assert!(hx * ix + hy * iy > 0.0, "({x},{y}) heading {}", next.heading);
                if ix != 0.0 {
                    assert!(hx * ix >= 0.0);
                }
                if iy != 0.0 {
                    assert!(hy * iy >= 0.0);
                }
                let p = next.position;
                assert!(p.x >= r && p.x <= cfg.arena_width - r && p.y >= r && p.y <= cfg.arena_height - r);
            }
        }
    }

    #[test]
    fn zero_speed_only_turns() {
        let cfg = SimConfig::default();
        let mut rb = robot(50.0, 60.0, 0.5);
        apply_motion(
            &mut rb,
            MotionCommand {
                speed: 0.0,
                heading_delta: 0.25,
            },
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        assert_eq!(rb.position, Point2::new(50.0, 60.0));
        assert!((rb.heading - 0.75).abs() < 1e-15);
    }
}
