use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use walling_core::metrics::TickMetrics;
use walling_core::qnet::{
    encode_observation, load_checkpoint, ActionId, EncodedObservation, NetworkParameters, NetworkShape,
};
use walling_core::sim::{
    tick, Controller, ControllerState, Decision, DecisionContext, MotionCommand, NeighborObservation,
    ObservationFrame, RobotState, Swarm, WorldState,
};
use walling_core::train::{
    compute_reward, epsilon_at, sync_target, td_targets, td_update, DeadlockTracker, ReplayBuffer, TdOptions,
    Trainer, TrainingConfig, Transition,
};
use walling_core::{Error, Point2, ScenarioSpec, SimConfig};
use walling_kernel::{Adam, AdamConfig};

fn metrics(cov_a: f64, cov_b: f64, mixing: f64) -> TickMetrics {
    TickMetrics {
        step: 0,
        coverage_a: cov_a,
        coverage_b: cov_b,
        mixing,
    }
}

fn obs(rng: &mut ChaCha8Rng, valid: usize) -> EncodedObservation {
    let mut f = ObservationFrame::empty(150.0);
    for i in 0..valid {
        f.neighbors[i] = NeighborObservation {
            distance: 20.0 * (i + 1) as f64,
            aoa: rng.random_range(-PI..PI),
            nestmate: rng.random(),
            valid: true,
            neighbor: Some(i + 1),
        };
    }
    encode_observation(&f, &SimConfig::default())
}

fn transition(rng: &mut ChaCha8Rng, reward: f32, done: bool) -> Transition {
    Transition {
        obs: obs(rng, 3),
        action: ActionId::ALL[rng.random_range(0..4)],
        reward,
        next_obs: obs(rng, 4),
        done,
    }
}

fn small_config(total_steps: u64) -> TrainingConfig {
    TrainingConfig {
        hidden: 16,
        heads: 2,
        batch_size: 16,
        warmup_transitions: 200,
        total_steps,
        checkpoint_interval: 1000,
        ..TrainingConfig::default()
    }
}

fn small_trainer(total_steps: u64, seed: u64) -> Trainer {
    Trainer::new(
        SimConfig::default(),
        ScenarioSpec::new(3, 4, 4),
        small_config(total_steps),
        seed,
    )
    .unwrap()
}

fn param_bits(p: &NetworkParameters) -> Vec<u32> {
    p.tensors
        .iter()
        .chain([&p.bn_stats.mean, &p.bn_stats.var])
        .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
        .collect()
}

#[test]
fn epsilon_schedule() {
    let c = TrainingConfig::default();
    assert_eq!(epsilon_at(&c, 0), 1.0);
    assert_eq!(epsilon_at(&c, 50_000), 0.01);
    assert!((epsilon_at(&c, 25_000) - 0.505).abs() <= 1e-9);
    assert_eq!(epsilon_at(&c, 400_000), 0.01);
    let mut last = f64::INFINITY;
    for s in (0..120_000).step_by(7) {
        let e = epsilon_at(&c, s);
        assert!(e <= last && (0.01..=1.0).contains(&e));
        last = e;
    }
}

#[test]
fn reward_examples() {
    let sim = SimConfig::default();
    let c = TrainingConfig::default();
    let same = metrics(20.0, 30.0, 12.0);
    assert_eq!(compute_reward(&same, &same, Swarm::A, false, Some(100.0), &sim, &c), 0.0);
    assert_eq!(compute_reward(&same, &same, Swarm::B, false, None, &sim, &c), 0.0);
    let less_mixed = metrics(20.0, 30.0, 11.0);
    let r = compute_reward(&same, &less_mixed, Swarm::A, false, None, &sim, &c);
    assert!((r - 0.1).abs() < 1e-12, "{r}");
    let wider_b = metrics(20.0, 35.0, 12.0);
    assert!((compute_reward(&same, &wider_b, Swarm::B, false, None, &sim, &c) - 0.5).abs() < 1e-12);
    assert_eq!(compute_reward(&same, &wider_b, Swarm::A, false, None, &sim, &c), 0.0);
    assert_eq!(compute_reward(&same, &same, Swarm::A, true, None, &sim, &c), -0.5);
    assert_eq!(compute_reward(&same, &same, Swarm::A, false, Some(19.9), &sim, &c), -0.1);
    assert_eq!(compute_reward(&same, &same, Swarm::A, false, Some(20.0), &sim, &c), 0.0);
}

#[test]
fn reward_is_bounded_by_the_weights() {
    let sim = SimConfig::default();
    let c = TrainingConfig::default();
    let bound = c.w_cov + c.w_mix + c.w_dead + c.w_prox;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut m = || metrics(rng.random_range(0.0..=100.0), rng.random_range(0.0..=100.0), rng.random_range(0.0..=100.0));
    for i in 0..10_000 {
        let (a, b) = (m(), m());
        let r = compute_reward(&a, &b, if i % 2 == 0 { Swarm::A } else { Swarm::B }, i % 3 == 0, Some((i % 40) as f64), &sim, &c);
        assert!(r.abs() <= bound + 1e-12);
    }
    let worst = compute_reward(&metrics(100.0, 0.0, 0.0), &metrics(0.0, 0.0, 100.0), Swarm::A, true, Some(0.0), &sim, &c);
    assert!((worst + bound).abs() < 1e-12);
}

/// Two robots facing each other that keep driving forward.
struct HeadOn;

impl Controller for HeadOn {
    fn decide(&mut self, ctx: &DecisionContext<'_>, _rng: &mut ChaCha8Rng) -> Result<Vec<Decision>, Error> {
        Ok(ctx
            .robots
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let other = &ctx.robots[1 - i];
                let want = (other.position.y - r.position.y).atan2(other.position.x - r.position.x);
                Decision {
                    state: r.controller_state,
                    command: MotionCommand {
                        speed: ctx.config.speed,
                        heading_delta: want - r.heading,
                    },
                }
            })
            .collect())
    }
}

#[test]
fn pinned_robots_are_penalised_for_deadlock() {
    let sim = SimConfig::default();
    let c = TrainingConfig::default();
    let robot = |swarm, x: f64, heading| RobotState {
        id: 0,
        swarm,
        position: Point2::new(x, 500.0),
        heading,
        commanded_speed: 0.0,
        controller_state: ControllerState::Idle,
    };
    let mut world = WorldState::from_robots(sim.clone(), vec![robot(Swarm::A, 495.0, 0.0), robot(Swarm::B, 505.0, PI - 1e-12)], 0).unwrap();
    let mut trackers: Vec<DeadlockTracker> = world.robots.iter().map(|r| DeadlockTracker::new(c.deadlock_window, r.position)).collect();
    let threshold = c.deadlock_displacement_radii * sim.robot_radius;
    let mut prev = world.metrics();
    for t in 1..=80 {
        let m = tick(&mut world, &mut HeadOn).unwrap();
        for (i, r) in world.robots.iter().enumerate() {
            trackers[i].record(r.position, true);
            let dead = trackers[i].deadlocked(threshold);
            assert_eq!(dead, t >= c.deadlock_window, "tick {t}");
            let reward = compute_reward(&prev, &m, r.swarm, dead, Some(10.0), &sim, &c);
            let expected = -c.w_prox - if dead { c.w_dead } else { 0.0 };
            assert!((reward - expected).abs() < 1e-12, "tick {t}: {reward}");
        }
        prev = m;
    }
}

#[test]
fn deadlock_needs_a_moving_action_and_little_displacement() {
    let mut still = DeadlockTracker::new(50, Point2::new(0.0, 0.0));
    let mut wandering = DeadlockTracker::new(50, Point2::new(0.0, 0.0));
    let mut resting = DeadlockTracker::new(50, Point2::new(0.0, 0.0));
    for t in 1..=60 {
        still.record(Point2::new(0.01 * t as f64, 0.0), true);
        wandering.record(Point2::new(0.2 * t as f64, 0.0), true);
        resting.record(Point2::new(0.0, 0.0), t % 10 != 0);
    }
    assert!(still.deadlocked(5.0));
    assert!(!wandering.deadlocked(5.0));
    assert!(!resting.deadlocked(5.0));
}

#[test]
fn replay_is_fifo() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (a, b, c) = (transition(&mut rng, 1.0, false), transition(&mut rng, 2.0, false), transition(&mut rng, 3.0, true));
    let mut buf = ReplayBuffer::new(2);
    for t in [a, b, c] {
        buf.push(t);
    }
    let kept: Vec<f32> = buf.iter_oldest_first().map(|t| t.reward).collect();
    assert_eq!(kept, vec![2.0, 3.0]);
}

#[test]
fn replay_never_exceeds_capacity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let base = transition(&mut rng, 0.0, false);
    let mut buf = ReplayBuffer::new(100_000);
    for i in 0..1_000_000u32 {
        buf.push(Transition {
            reward: i as f32,
            ..base
        });
        assert!(buf.len() <= 100_000);
    }
    assert_eq!(buf.len(), 100_000);
    let kept: Vec<f32> = buf.iter_oldest_first().map(|t| t.reward).collect();
    let expected: Vec<f32> = (900_000..1_000_000u32).map(|i| i as f32).collect();
    assert_eq!(kept, expected);
}

#[test]
fn sampling_is_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let base = transition(&mut rng, 0.0, false);
    let mut buf = ReplayBuffer::new(1000);
    for _ in 0..1000 {
        buf.push(base);
    }
    let mut counts = vec![0u64; 1000];
    for _ in 0..100_000 {
        for i in buf.sample_indices(64, &mut rng) {
            counts[i] += 1;
        }
    }
    let expected = 64.0 * 100_000.0 / 1000.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // Wilson-Hilferty approximation of the 0.999 quantile with 999 degrees of freedom.
    let df = 999.0f64;
    let z = 3.090_232;
    let critical = df * (1.0 - 2.0 / (9.0 * df) + z * (2.0 / (9.0 * df)).sqrt()).powi(3);
    assert!(chi2 < critical, "chi2 {chi2} >= {critical}");
}

#[test]
fn terminal_and_undiscounted_targets_are_the_reward() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let target = NetworkParameters::init(NetworkShape { hidden: 16, heads: 2 }, &mut rng).unwrap();
    let batch: Vec<Transition> = (0..20).map(|i| transition(&mut rng, i as f32 * 0.37 - 2.0, i % 2 == 0)).collect();
    let y = td_targets(&target, &batch, 0.99).unwrap();
    for (t, y) in batch.iter().zip(&y) {
        if t.done {
            assert_eq!(*y, t.reward);
        } else {
            assert_ne!(*y, t.reward);
        }
    }
    let y0 = td_targets(&target, &batch, 0.0).unwrap();
    for (t, y) in batch.iter().zip(&y0) {
        assert_eq!(*y, t.reward);
    }
}

#[test]
fn repeated_updates_on_one_transition_reduce_the_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let shape = NetworkShape { hidden: 4, heads: 1 };
    let mut online = NetworkParameters::init(shape, &mut rng).unwrap();
    let target = online.clone();
    let batch = vec![transition(&mut rng, 1.0, true)];
    let config = AdamConfig {
        learning_rate: 5e-4,
        ..AdamConfig::default()
    };
    let mut adam = Adam::new(config, online.tensors.iter().map(|t| t.shape()));
    let before_target = param_bits(&target);
    let options = TdOptions {
        gamma: 0.99,
        huber_delta: 1.0,
        dropout_rate: 0.0,
    };
    // Each call reports the loss before its step, so 101 calls cover 100 post-update losses.
    let losses: Vec<f32> = (0..101)
        .map(|_| td_update(&mut online, &target, &batch, &mut adam, options, &mut rng).unwrap())
        .collect();
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "{losses:?}");
    }
    assert_eq!(param_bits(&target), before_target);
}

#[test]
fn target_syncs_every_thousand_steps() {
    let mut trainer = small_trainer(10_000, 7);
    let mut last_target = param_bits(trainer.target());
    trainer
        .run(None, |t, row| {
            let step = row.step + 1;
            let target = param_bits(t.target());
            if step % 1000 == 0 {
                assert_eq!(target, param_bits(t.online()), "step {step}");
                assert_eq!(t.sync_count(), step / 1000);
            } else {
                assert_eq!(target, last_target, "target moved between syncs at step {step}");
            }
            last_target = target;
        })
        .unwrap();
    assert_eq!(trainer.sync_count(), 10);
    assert_eq!(trainer.step(), 10_000);
}

#[test]
fn step_counter_and_episode_boundaries() {
    let mut trainer = Trainer::new(
        SimConfig::default(),
        ScenarioSpec::new(3, 3, 3),
        TrainingConfig {
            buffer_capacity: 20_000,
            ..small_config(3000)
        },
        8,
    )
    .unwrap();
    let mut rows = Vec::new();
    trainer.run(None, |_, r| rows.push(*r)).unwrap();
    assert_eq!(trainer.step(), 3000);
    assert_eq!(rows.len(), 3000);
    assert!(rows.iter().enumerate().all(|(i, r)| r.step == i as u64));
    assert_eq!(rows[0].epsilon, 1.0);
    let per_tick = 6;
    let done: Vec<usize> = trainer
        .replay()
        .iter_oldest_first()
        .enumerate()
        .filter(|(_, t)| t.done)
        .map(|(i, _)| i / per_tick)
        .collect();
    let mut ticks: Vec<usize> = done.clone();
    ticks.dedup();
    assert_eq!(ticks, vec![999, 1999, 2999]);
    assert_eq!(done.len(), 3 * per_tick);
    assert!(rows.iter().all(|r| r.loss.is_some() == ((r.step as usize + 1) * per_tick >= 200)));
}

#[test]
fn training_is_deterministic() {
    let run = || {
        let mut t = small_trainer(1500, 9);
        let mut rows = Vec::new();
        t.run(None, |_, r| rows.push(*r)).unwrap();
        (rows, t.checkpoint().to_json())
    };
    let (r1, c1) = run();
    let (r2, c2) = run();
    assert_eq!(r1, r2);
    assert_eq!(c1, c2);
    let mut other = small_trainer(1500, 10);
    other.run(None, |_, _| {}).unwrap();
    assert_ne!(other.checkpoint().to_json(), c1);
}

#[test]
fn resuming_matches_the_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let full_dir = dir.path().join("full");
    let mut full = small_trainer(2000, 11);
    let mut full_rows = Vec::new();
    let final_path = full.run(Some(&full_dir), |_, r| full_rows.push(*r)).unwrap().unwrap();
    assert!(full_dir.join("ckpt_00001000.json").exists());
    assert!(full_dir.join("ckpt_00002000.json").exists());

    let (_, file) = load_checkpoint(&full_dir.join("ckpt_00001000.json")).unwrap();
    let mut resumed = Trainer::from_checkpoint(&file, None).unwrap();
    assert_eq!(resumed.step(), 1000);
    let mut resumed_rows = Vec::new();
    let resumed_path = resumed.run(Some(&dir.path().join("resumed")), |_, r| resumed_rows.push(*r)).unwrap().unwrap();
    assert_eq!(resumed_rows, full_rows[1000..]);
    assert_eq!(std::fs::read(final_path).unwrap(), std::fs::read(resumed_path).unwrap());
}

#[test]
fn untouched_target_after_sync_copy() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let online = NetworkParameters::init(NetworkShape { hidden: 16, heads: 2 }, &mut rng).unwrap();
    let target = sync_target(&online);
    assert_eq!(param_bits(&target), param_bits(&online));
    let x: Vec<EncodedObservation> = (1..=5).map(|n| obs(&mut rng, n)).collect();
    assert_eq!(
        walling_core::qnet::q_forward(&online, &x).unwrap(),
        walling_core::qnet::q_forward(&target, &x).unwrap()
    );
}
