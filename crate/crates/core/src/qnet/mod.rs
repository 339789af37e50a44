//! Attention Q-network over the seven-neighbor observation frame.
//!
//! Each valid neighbor becomes a three-feature token (normalized range,
//! normalized bearing, nestmate bit). Tokens share one embedding, then pass
//! through batch normalization, ReLU, dropout, multi-head self-attention and a
//! mean over the sample's valid tokens before a linear head produces one
//! Q-value per action. Padded tokens are never computed, so the output does
//! not depend on the order of the valid tokens.

pub(crate) mod checkpoint;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use walling_kernel::{
    batch_norm, dropout, multihead_attention_ragged, AttentionParams, BatchNormStats, Mode, Real,
    Segment, Tape, Tensor, Var,
};

use crate::config::SimConfig;
use crate::sim::{
    crw_delta, wrap_angle, Controller, ControllerState, Decision, DecisionContext, MotionCommand,
    ObservationFrame, FRAME_SIZE,
};
use crate::Error;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, CheckpointError, CheckpointFile, EncodedTensor, ParamsRecord,
    FORMAT_VERSION,
};

pub const TOKEN_FEATURES: usize = 3;
pub const NUM_ACTIONS: usize = 4;
pub const DEFAULT_HIDDEN: usize = 128;
pub const DEFAULT_HEADS: usize = 4;
pub const DROPOUT_RATE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActionId {
    AvoidNestmate = 0,
    AvoidNonNestmate = 1,
    Standstill = 2,
    RandomWalk = 3,
}

impl ActionId {
    pub const ALL: [ActionId; NUM_ACTIONS] = [
        ActionId::AvoidNestmate,
        ActionId::AvoidNonNestmate,
        ActionId::Standstill,
        ActionId::RandomWalk,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            ActionId::AvoidNestmate => "avoid_nestmate",
            ActionId::AvoidNonNestmate => "avoid_non_nestmate",
            ActionId::Standstill => "standstill",
            ActionId::RandomWalk => "random_walk",
        }
    }

    /// Every action except Standstill asks the robot to move.
    pub fn is_moving(self) -> bool {
        self != ActionId::Standstill
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QValues(pub [f32; NUM_ACTIONS]);

impl QValues {
    /// Index of the largest value; ties go to the lowest action.
    pub fn argmax(&self) -> ActionId {
        let mut best = 0;
        for i in 1..NUM_ACTIONS {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        ActionId::ALL[best]
    }

    pub fn max(&self) -> f32 {
        self.0.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }
}

/// One frame as network input. Invalid slots hold zeros.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncodedObservation {
    pub tokens: [[f32; TOKEN_FEATURES]; FRAME_SIZE],
    pub mask: [bool; FRAME_SIZE],
}

impl EncodedObservation {
    pub fn valid_tokens(&self) -> impl Iterator<Item = &[f32; TOKEN_FEATURES]> {
        self.tokens.iter().zip(&self.mask).filter(|(_, &m)| m).map(|(t, _)| t)
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Token used when a robot senses nothing: a far-away, non-nestmate reading.
pub const SENTINEL_TOKEN: [f32; TOKEN_FEATURES] = [1.0, 0.0, 0.0];

/// `(d / d_max clamped to [0, 1], θ / π, nestmate bit)` per valid neighbor.
pub fn encode_observation(frame: &ObservationFrame, config: &SimConfig) -> EncodedObservation {
    let mut enc = EncodedObservation {
        tokens: [[0.0; TOKEN_FEATURES]; FRAME_SIZE],
        mask: [false; FRAME_SIZE],
    };
    for (i, n) in frame.neighbors.iter().enumerate() {
        if !n.valid {
            continue;
        }
        enc.tokens[i] = [
            (n.distance / config.sensing_range).clamp(0.0, 1.0) as f32,
            (n.aoa / std::f64::consts::PI) as f32,
            if n.nestmate { 1.0 } else { 0.0 },
        ];
        enc.mask[i] = true;
    }
    if !enc.mask.iter().any(|&m| m) {
        enc.tokens[0] = SENTINEL_TOKEN;
        enc.mask[0] = true;
    }
    enc
}

/// Range and bearing recovered from an encoded token.
pub fn decode_token(token: &[f32; TOKEN_FEATURES], config: &SimConfig) -> (f64, f64) {
    (
        token[0] as f64 * config.sensing_range,
        token[1] as f64 * std::f64::consts::PI,
    )
}

/// Hidden width and head count. The defaults are 128 and 4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub hidden: usize,
    pub heads: usize,
}

impl Default for NetworkShape {
    fn default() -> Self {
        Self {
            hidden: DEFAULT_HIDDEN,
            heads: DEFAULT_HEADS,
        }
    }
}

impl NetworkShape {
    pub fn validate(&self) -> Result<(), Error> {
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden width {} must be a positive multiple of the head count {}",
                self.hidden, self.heads
            )));
        }
        Ok(())
    }

    /// Names and shapes of the trainable tensors, in canonical order.
    pub fn trainable_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        let h = self.hidden;
        vec![
            ("embed_w", vec![TOKEN_FEATURES, h]),
            ("embed_b", vec![h]),
            ("bn_gamma", vec![h]),
            ("bn_beta", vec![h]),
            ("attn_wq", vec![h, h]),
            ("attn_bq", vec![h]),
            ("attn_wk", vec![h, h]),
            ("attn_bk", vec![h]),
            ("attn_wv", vec![h, h]),
            ("attn_bv", vec![h]),
            ("attn_wo", vec![h, h]),
            ("attn_bo", vec![h]),
            ("head_w", vec![h, NUM_ACTIONS]),
            ("head_b", vec![NUM_ACTIONS]),
        ]
    }

    pub fn trainable_count(&self) -> usize {
        self.trainable_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

pub const NUM_TRAINABLE: usize = 14;

/// Weights, biases and batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParameters<T: Real = f32> {
    pub shape: NetworkShape,
    /// Trainable tensors in the order of [`NetworkShape::trainable_shapes`].
    pub tensors: Vec<Tensor<T>>,
    pub bn_stats: BatchNormStats<T>,
}

/// Positions of the trainable tensors in [`NetworkParameters::tensors`].
pub mod idx {
    pub const EMBED_W: usize = 0;
    pub const EMBED_B: usize = 1;
    pub const BN_GAMMA: usize = 2;
    pub const BN_BETA: usize = 3;
    pub const WQ: usize = 4;
    pub const BQ: usize = 5;
    pub const WK: usize = 6;
    pub const BK: usize = 7;
    pub const WV: usize = 8;
    pub const BV: usize = 9;
    pub const WO: usize = 10;
    pub const BO: usize = 11;
    pub const HEAD_W: usize = 12;
    pub const HEAD_B: usize = 13;
}

impl<T: Real> NetworkParameters<T> {
    /// Every tensor zero, including gamma; running variance is one.
    pub fn zeros(shape: NetworkShape) -> Self {
        Self {
            shape,
            tensors: shape
                .trainable_shapes()
                .iter()
                .map(|(_, s)| Tensor::zeros(s))
                .collect(),
            bn_stats: BatchNormStats::new(shape.hidden),
        }
    }

    /// Glorot-uniform weights, zero biases, unit gamma.
    pub fn init<R: Rng + ?Sized>(shape: NetworkShape, rng: &mut R) -> Result<Self, Error> {
        shape.validate()?;
        let mut p = Self::zeros(shape);
        for (i, (_, s)) in shape.trainable_shapes().iter().enumerate() {
            if s.len() == 2 {
                let limit = (6.0 / (s[0] + s[1]) as f64).sqrt();
                for v in p.tensors[i].data_mut() {
                    *v = T::lit(rng.random_range(-limit..limit));
                }
            }
        }
        for v in p.tensors[idx::BN_GAMMA].data_mut() {
            *v = T::one();
        }
        Ok(p)
    }

    pub fn cast<U: Real>(&self) -> NetworkParameters<U> {
        NetworkParameters {
            shape: self.shape,
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
            bn_stats: BatchNormStats {
                mean: self.bn_stats.mean.cast(),
                var: self.bn_stats.var.cast(),
                momentum: U::lit(self.bn_stats.momentum.to_f64_lossy()),
                eps: U::lit(self.bn_stats.eps.to_f64_lossy()),
            },
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.all_finite())
            && self.bn_stats.mean.all_finite()
            && self.bn_stats.var.all_finite()
    }

    /// Checks tensor shapes against `self.shape`.
    pub fn check_shapes(&self) -> Result<(), Error> {
        let expected = self.shape.trainable_shapes();
        if self.tensors.len() != expected.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                self.tensors.len()
            )));
        }
        for (t, (name, s)) in self.tensors.iter().zip(&expected) {
            if t.shape() != s.as_slice() {
                return Err(Error::Config(format!(
                    "{name} has shape {:?}, expected {s:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Tape handles for one registration of the parameters.
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub vars: Vec<Var>,
}

impl ParamVars {
    fn attention(&self, heads: usize) -> AttentionParams {
        let v = &self.vars;
        AttentionParams {
            wq: v[idx::WQ],
            bq: v[idx::BQ],
            wk: v[idx::WK],
            bk: v[idx::BK],
            wv: v[idx::WV],
            bv: v[idx::BV],
            wo: v[idx::WO],
            bo: v[idx::BO],
            heads,
        }
    }
}

/// Puts the parameters on `tape`, as trainable leaves or constants.
pub fn register<T: Real>(tape: &mut Tape<T>, params: &NetworkParameters<T>, trainable: bool) -> ParamVars {
    ParamVars {
        vars: params
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect(),
    }
}

/// Valid tokens of a batch stacked into rows, with one segment per sample.
pub fn pack_tokens<T: Real>(batch: &[EncodedObservation]) -> Result<(Tensor<T>, Vec<Segment>), Error> {
    let mut data = Vec::with_capacity(batch.len() * 3 * TOKEN_FEATURES);
    let mut segments = Vec::with_capacity(batch.len());
    let mut rows = 0;
    for (i, obs) in batch.iter().enumerate() {
        let start = rows;
        for t in obs.valid_tokens() {
            data.extend(t.iter().map(|&x| T::lit(x as f64)));
            rows += 1;
        }
        if rows == start {
            return Err(Error::Kernel(walling_kernel::KernelError::InvalidMask(format!(
                "observation {i} has no valid token"
            ))));
        }
        segments.push(Segment {
            start,
            len: rows - start,
        });
    }
    Ok((Tensor::from_vec(&[rows, TOKEN_FEATURES], data)?, segments))
}

/// Records the forward pass on `tape` and returns the `[batch, 4]` Q node.
/// Train mode normalizes with batch statistics and folds them into `stats`.
pub fn forward_on_tape<T: Real, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    vars: &ParamVars,
    shape: NetworkShape,
    stats: &mut BatchNormStats<T>,
    batch: &[EncodedObservation],
    mode: Mode,
    dropout_rate: f64,
    rng: &mut R,
) -> Result<Var, Error> {
    let (tokens, segments) = pack_tokens::<T>(batch)?;
    let v = &vars.vars;
    let x = tape.constant(tokens);
    let h = tape.linear(x, v[idx::EMBED_W], Some(v[idx::EMBED_B]))?;
    let h = batch_norm(tape, h, v[idx::BN_GAMMA], v[idx::BN_BETA], stats, mode)?;
    let h = tape.relu(h)?;
    let h = dropout(tape, h, dropout_rate, mode, rng)?;
    let h = multihead_attention_ragged(tape, h, &segments, &vars.attention(shape.heads))?;
    let pooled = tape.segment_mean(h, &segments)?;
    Ok(tape.linear(pooled, v[idx::HEAD_W], Some(v[idx::HEAD_B]))?)
}

/// Eval-mode Q-values for a batch; rows are independent of each other.
pub fn q_forward(params: &NetworkParameters, batch: &[EncodedObservation]) -> Result<Vec<QValues>, Error> {
    if batch.is_empty() {
        return Ok(Vec::new());
    }
    let mut tape = Tape::<f32>::new();
    let vars = register(&mut tape, params, false);
    let mut stats = params.bn_stats.clone();
    // Eval mode draws nothing from the stream.
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    let q = forward_on_tape(&mut tape, &vars, params.shape, &mut stats, batch, Mode::Eval, 0.0, &mut unused)?;
    Ok(rows_to_qvalues(tape.value(q)))
}

/// Q-values for a batch in either mode. Train mode needs at least two valid
/// tokens across the batch and updates the running statistics.
pub fn q_forward_mode<R: Rng + ?Sized>(
    params: &mut NetworkParameters,
    batch: &[EncodedObservation],
    mode: Mode,
    rng: &mut R,
) -> Result<Vec<QValues>, Error> {
    let mut tape = Tape::<f32>::new();
    let vars = register(&mut tape, params, false);
    let q = forward_on_tape(
        &mut tape,
        &vars,
        params.shape,
        &mut params.bn_stats,
        batch,
        mode,
        DROPOUT_RATE,
        rng,
    )?;
    Ok(rows_to_qvalues(tape.value(q)))
}

fn rows_to_qvalues(q: &Tensor<f32>) -> Vec<QValues> {
    (0..q.rows())
        .map(|r| {
            let row = q.row(r);
            QValues([row[0], row[1], row[2], row[3]])
        })
        .collect()
}

/// ε-greedy: a uniform random action with probability ε, else the argmax.
pub fn select_action<R: Rng + ?Sized>(q: &QValues, epsilon: f64, rng: &mut R) -> ActionId {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return ActionId::ALL[rng.random_range(0..NUM_ACTIONS)];
    }
    q.argmax()
}

/// Motion for one action. Flee actions fall back to a CRW step when no
/// neighbor of the relevant kind is visible.
pub fn act_to_motion<R: Rng + ?Sized>(
    action: ActionId,
    frame: &ObservationFrame,
    config: &SimConfig,
    rng: &mut R,
) -> MotionCommand {
    let flee = |nestmate: bool, rng: &mut R| match frame.nearest(nestmate) {
        Some(n) => wrap_angle(n.aoa + std::f64::consts::PI),
        None => crw_delta(config, rng),
    };
    match action {
        ActionId::Standstill => MotionCommand::STOP,
        ActionId::RandomWalk => MotionCommand {
            speed: config.speed,
            heading_delta: crw_delta(config, rng),
        },
        ActionId::AvoidNestmate => MotionCommand {
            speed: config.speed,
            heading_delta: flee(true, rng),
        },
        ActionId::AvoidNonNestmate => MotionCommand {
            speed: config.speed,
            heading_delta: flee(false, rng),
        },
    }
}

/// Per-robot state of the learned controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RlRobotState {
    /// Action executed on the last tick.
    pub action: Option<ActionId>,
    /// Remaining ticks of a latched Standstill.
    pub hold_remaining: u32,
    /// Whether the last action came from a fresh policy query.
    pub queried: bool,
}

impl RlRobotState {
    pub fn label(&self) -> &'static str {
        self.action.map_or("idle", ActionId::label)
    }
}

/// Shared-policy controller: every robot queries the same network on its own
/// frame. A chosen Standstill is held for `hold_ticks` further ticks without
/// re-querying.
pub struct RlController<'a> {
    pub params: &'a NetworkParameters,
    pub epsilon: f64,
    pub hold_ticks: u32,
}

impl<'a> RlController<'a> {
    pub fn new(params: &'a NetworkParameters, epsilon: f64, hold_ticks: u32) -> Self {
        Self {
            params,
            epsilon,
            hold_ticks,
        }
    }
}

impl Controller for RlController<'_> {
    fn decide(&mut self, ctx: &DecisionContext<'_>, rng: &mut ChaCha8Rng) -> Result<Vec<Decision>, Error> {
        let states: Vec<RlRobotState> = ctx
            .robots
            .iter()
            .map(|r| match r.controller_state {
                ControllerState::Rl(s) => s,
                _ => RlRobotState::default(),
            })
            .collect();
        let latched = |s: &RlRobotState| s.action == Some(ActionId::Standstill) && s.hold_remaining > 0;
        let query: Vec<usize> = (0..states.len()).filter(|&i| !latched(&states[i])).collect();
        let encoded: Vec<EncodedObservation> = query
            .iter()
            .map(|&i| encode_observation(&ctx.frames[i], ctx.config))
            .collect();
        let q = q_forward(self.params, &encoded)?;
        let mut fresh = query.iter().zip(q);
        let mut next_fresh = fresh.next();
        let mut out = Vec::with_capacity(states.len());
        for (i, s) in states.iter().enumerate() {
            let (action, hold_remaining, queried) = match next_fresh {
                Some((&j, ref qv)) if j == i => {
                    let a = select_action(qv, self.epsilon, rng);
                    next_fresh = fresh.next();
                    let hold = if a == ActionId::Standstill { self.hold_ticks } else { 0 };
                    (a, hold, true)
                }
                _ => (ActionId::Standstill, s.hold_remaining - 1, false),
            };
            let command = act_to_motion(action, &ctx.frames[i], ctx.config, rng);
            out.push(Decision {
                state: ControllerState::Rl(RlRobotState {
                    action: Some(action),
                    hold_remaining,
                    queried,
                }),
                command,
            });
        }
        Ok(out)
    }
}
