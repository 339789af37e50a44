//! The walling state machine.
//!
//! States are Moving, Walling and AvoidNonNestmate; robots start in Moving.
//! Each tick a robot detects its input symbols, takes one transition, acts on
//! the resulting state and, while walling, counts its timer down.
//!
//! | state            | symbol (by priority)         | next                          |
//! |------------------|------------------------------|-------------------------------|
//! | Moving           | NonNestmateEncounter         | Walling, timer := duration    |
//! | Moving           | NestmateEncounter            | Moving, avoiding the nestmate |
//! | Walling          | MovingNestmateEncounter      | Walling, timer := duration    |
//! | Walling          | WallingTimerExpired          | AvoidNonNestmate              |
//! | AvoidNonNestmate | BelowSafeDist                | AvoidNonNestmate              |
//! | AvoidNonNestmate | AboveSafeDist                | Moving                        |
//!
//! Anything else is a self-loop.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::sim::{
    crw_delta, wrap_angle, Controller, ControllerState, Decision, DecisionContext, MotionCommand,
    ObservationFrame, RobotState,
};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FsmState {
    Moving,
    Walling,
    AvoidNonNestmate,
}

impl FsmState {
    pub const ALL: [FsmState; 3] = [FsmState::Moving, FsmState::Walling, FsmState::AvoidNonNestmate];

    pub fn label(self) -> &'static str {
        match self {
            FsmState::Moving => "moving",
            FsmState::Walling => "walling",
            FsmState::AvoidNonNestmate => "avoid_non_nestmate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Symbol {
    NestmateEncounter,
    NonNestmateEncounter,
    WallingTimerExpired,
    AboveSafeDist,
    BelowSafeDist,
    MovingNestmateEncounter,
}

impl Symbol {
    pub const ALL: [Symbol; 6] = [
        Symbol::NestmateEncounter,
        Symbol::NonNestmateEncounter,
        Symbol::WallingTimerExpired,
        Symbol::AboveSafeDist,
        Symbol::BelowSafeDist,
        Symbol::MovingNestmateEncounter,
    ];

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

/// A subset of the six input symbols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct SymbolSet(u8);

impl SymbolSet {
    pub const fn empty() -> Self {
        Self(0)
    }

    /// The subset whose members are the set bits of `bits` (bit i = `Symbol::ALL[i]`).
    pub fn from_bits(bits: u8) -> Self {
        Self(bits & 0b11_1111)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn contains(self, s: Symbol) -> bool {
        self.0 & s.bit() != 0
    }

    pub fn insert(&mut self, s: Symbol) {
        self.0 |= s.bit();
    }

    pub fn with(mut self, s: Symbol) -> Self {
        self.insert(s);
        self
    }

    pub fn iter(self) -> impl Iterator<Item = Symbol> {
        Symbol::ALL.into_iter().filter(move |s| self.contains(*s))
    }
}

impl FromIterator<Symbol> for SymbolSet {
    fn from_iter<I: IntoIterator<Item = Symbol>>(iter: I) -> Self {
        let mut s = SymbolSet::empty();
        for x in iter {
            s.insert(x);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ControllerFsmState {
    pub state: FsmState,
    /// Ticks left in Walling; only meaningful there.
    pub walling_timer_remaining: u32,
    pub walling_timer_duration: u32,
    /// Set while Moving when the last transition saw a nestmate (and no
    /// non-nestmate) within the encounter radius.
    pub avoid_nestmate: bool,
}

impl ControllerFsmState {
    pub fn initial(walling_timer_duration: u32) -> Self {
        Self {
            state: FsmState::Moving,
            walling_timer_remaining: 0,
            walling_timer_duration,
            avoid_nestmate: false,
        }
    }
}

/// Input symbols for robot `me` from its frame and the tick-start world.
pub fn detect_events(
    me: &ControllerFsmState,
    frame: &ObservationFrame,
    robots: &[RobotState],
    config: &SimConfig,
) -> SymbolSet {
    let mut s = SymbolSet::empty();
    let nest = frame.min_distance(true);
    let other = frame.min_distance(false);
    if nest.is_some_and(|d| d < config.encounter_radius) {
        s.insert(Symbol::NestmateEncounter);
    }
    if other.is_some_and(|d| d < config.encounter_radius) {
        s.insert(Symbol::NonNestmateEncounter);
    }
    if other.is_some_and(|d| d < config.safe_dist) {
        s.insert(Symbol::BelowSafeDist);
    } else {
        s.insert(Symbol::AboveSafeDist);
    }
    let moving_nestmate = frame.valid().any(|n| {
        n.nestmate
            && n.distance < config.encounter_radius
            && n.neighbor.and_then(|j| robots.get(j)).is_some_and(|r| {
                matches!(r.controller_state, ControllerState::Fsm(f) if f.state == FsmState::Moving)
            })
    });
    if moving_nestmate {
        s.insert(Symbol::MovingNestmateEncounter);
    }
    if me.state == FsmState::Walling && me.walling_timer_remaining == 0 {
        s.insert(Symbol::WallingTimerExpired);
    }
    s
}

/// One transition of the state machine; total over all state and symbol-set pairs.
pub fn fsm_transition(current: ControllerFsmState, symbols: SymbolSet) -> ControllerFsmState {
    use FsmState::*;
    let mut next = current;
    next.avoid_nestmate = false;
    match current.state {
        Moving => {
            if symbols.contains(Symbol::NonNestmateEncounter) {
                next.state = Walling;
                next.walling_timer_remaining = current.walling_timer_duration;
            } else if symbols.contains(Symbol::NestmateEncounter) {
                next.avoid_nestmate = true;
            }
        }
        Walling => {
            if symbols.contains(Symbol::MovingNestmateEncounter) {
                next.walling_timer_remaining = current.walling_timer_duration;
            } else if symbols.contains(Symbol::WallingTimerExpired) {
                next.state = AvoidNonNestmate;
            }
        }
        AvoidNonNestmate => {
            if !symbols.contains(Symbol::BelowSafeDist) && symbols.contains(Symbol::AboveSafeDist) {
                next.state = Moving;
            }
        }
    }
    next
}

/// Motion for the current state.
pub fn fsm_act<R: Rng + ?Sized>(
    state: &ControllerFsmState,
    frame: &ObservationFrame,
    config: &SimConfig,
    rng: &mut R,
) -> MotionCommand {
    match state.state {
        FsmState::Walling => MotionCommand::STOP,
        FsmState::Moving => {
            let delta = match frame.nearest(true) {
                Some(n) if state.avoid_nestmate => wrap_angle(n.aoa + std::f64::consts::PI + crw_delta(config, rng)),
                _ => crw_delta(config, rng),
            };
            MotionCommand {
                speed: config.speed,
                heading_delta: delta,
            }
        }
        FsmState::AvoidNonNestmate => {
            let delta = match frame.nearest(false) {
                Some(n) => wrap_angle(n.aoa + std::f64::consts::PI),
                None => crw_delta(config, rng),
            };
            MotionCommand {
                speed: config.speed,
                heading_delta: delta,
            }
        }
    }
}

/// Counts the walling timer down by one tick (floor 0). The flag reports
/// whether the timer now reads zero.
pub fn fsm_tick_timer(state: ControllerFsmState) -> (ControllerFsmState, bool) {
    let mut next = state;
    next.walling_timer_remaining = state.walling_timer_remaining.saturating_sub(1);
    (next, next.walling_timer_remaining == 0)
}

/// Drives every robot with the walling state machine.
#[derive(Debug, Clone, Copy)]
pub struct FsmController {
    pub walling_timer_ticks: u32,
}

impl FsmController {
    pub fn new(walling_timer_ticks: u32) -> Self {
        Self { walling_timer_ticks }
    }

    pub fn from_seconds(config: &SimConfig, walling_timer_s: f64) -> Self {
        Self::new(config.seconds_to_ticks(walling_timer_s))
    }

    fn state_of(&self, robot: &RobotState) -> ControllerFsmState {
        match robot.controller_state {
            ControllerState::Fsm(s) => s,
            _ => ControllerFsmState::initial(self.walling_timer_ticks),
        }
    }
}

impl Controller for FsmController {
    fn decide(&mut self, ctx: &DecisionContext<'_>, rng: &mut ChaCha8Rng) -> Result<Vec<Decision>, Error> {
        // Robots that have never been driven start in Moving, and neighbors
        // see them that way.
        let seeded: Vec<RobotState>;
        let robots = if ctx.robots.iter().any(|r| !matches!(r.controller_state, ControllerState::Fsm(_))) {
            seeded = ctx
                .robots
                .iter()
                .map(|r| RobotState {
                    controller_state: ControllerState::Fsm(self.state_of(r)),
                    ..r.clone()
                })
                .collect();
            &seeded[..]
        } else {
            ctx.robots
        };
        let mut out = Vec::with_capacity(robots.len());
        for (robot, frame) in robots.iter().zip(ctx.frames) {
            let current = self.state_of(robot);
            let symbols = detect_events(&current, frame, robots, ctx.config);
            let mut next = fsm_transition(current, symbols);
            let command = fsm_act(&next, frame, ctx.config, rng);
            if next.state == FsmState::Walling {
                next = fsm_tick_timer(next).0;
            }
            out.push(Decision {
                state: ControllerState::Fsm(next),
                command,
            });
        }
        Ok(out)
    }
}
