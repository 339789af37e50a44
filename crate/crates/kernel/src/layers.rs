use rand::Rng;

use crate::tape::{Segment, Tape, Var};
use crate::tensor::{Real, Tensor};
use crate::KernelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running statistics of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormStats<T: Real = f32> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
    pub momentum: T,
    pub eps: T,
}

impl<T: Real> BatchNormStats<T> {
    pub fn new(features: usize) -> Self {
        Self {
            mean: Tensor::zeros(&[features]),
            var: Tensor::full(&[features], T::one()),
            momentum: T::lit(0.1),
            eps: T::lit(1e-5),
        }
    }
}

/// Batch normalization over the rows of `x`. Train mode normalizes with the
/// batch's own moments and folds them into `stats` (running variance uses the
/// unbiased estimate); eval mode normalizes with `stats`.
pub fn batch_norm<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    stats: &mut BatchNormStats<T>,
    mode: Mode,
) -> Result<Var, KernelError> {
    match mode {
        Mode::Eval => {
            let (node, _, _) = tape.batch_norm_node(
                x,
                gamma,
                beta,
                Some((stats.mean.data(), stats.var.data())),
                stats.eps,
            )?;
            Ok(node)
        }
        Mode::Train => {
            let rows = tape.value(x).rows();
            let (node, mean, var) = tape.batch_norm_node(x, gamma, beta, None, stats.eps)?;
            let m = stats.momentum;
            let unbias = T::lit(rows as f64) / T::lit((rows - 1) as f64);
            for (r, b) in stats.mean.data_mut().iter_mut().zip(&mean) {
                *r = (T::one() - m) * *r + m * *b;
            }
            for (r, b) in stats.var.data_mut().iter_mut().zip(&var) {
                *r = (T::one() - m) * *r + m * *b * unbias;
            }
            Ok(node)
        }
    }
}

/// Inverted-dropout keep factors: 0 with probability `rate`, else `1/(1-rate)`.
pub fn dropout_mask<T: Real, R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<T> {
    let keep = T::lit(1.0 / (1.0 - rate));
    (0..len)
        .map(|_| {
            if rng.random::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        })
        .collect()
}

/// Inverted dropout. Eval mode and `rate == 0` return `x` itself.
pub fn dropout<T: Real, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    x: Var,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Var, KernelError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(KernelError::Dimension(format!(
            "dropout rate {rate} outside [0, 1)"
        )));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x);
    }
    let mask = dropout_mask(tape.value(x).len(), rate, rng);
    tape.mul_const(x, mask)
}

/// Tape handles of one multi-head attention block. Each of `wq`, `wk`, `wv`
/// is `[dim, dim]`, holding the per-head `dim -> dim/heads` projections side
/// by side; `wo` maps the concatenated heads back to `dim`.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
    pub heads: usize,
}

/// Self-attention over a ragged batch: rows of `x` are tokens, and tokens only
/// attend within their own segment.
pub fn multihead_attention_ragged<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    segments: &[Segment],
    p: &AttentionParams,
) -> Result<Var, KernelError> {
    if let Some((i, _)) = segments.iter().enumerate().find(|(_, s)| s.len == 0) {
        return Err(KernelError::InvalidMask(format!(
            "sample {i} has no valid token"
        )));
    }
    let q = tape.linear(x, p.wq, Some(p.bq))?;
    let k = tape.linear(x, p.wk, Some(p.bk))?;
    let v = tape.linear(x, p.wv, Some(p.bv))?;
    let heads = tape.attention(q, k, v, segments, p.heads)?;
    tape.linear(heads, p.wo, Some(p.bo))
}

/// Self-attention over a padded `[batch, tokens, dim]` input. `mask` holds
/// `batch * tokens` validity flags; padded tokens are excluded as keys and
/// their output rows are exactly zero.
pub fn multihead_attention<T: Real>(
    tape: &mut Tape<T>,
    tokens: Var,
    mask: &[bool],
    p: &AttentionParams,
) -> Result<Var, KernelError> {
    let shape = tape.value(tokens).shape().to_vec();
    if shape.len() != 3 || shape[0] * shape[1] != mask.len() {
        return Err(KernelError::Dimension(format!(
            "attention input {shape:?} with mask of length {}",
            mask.len()
        )));
    }
    let (batch, t) = (shape[0], shape[1]);
    let mut rows = Vec::new();
    let mut segments = Vec::with_capacity(batch);
    for b in 0..batch {
        let start = rows.len();
        rows.extend((0..t).map(|i| b * t + i).filter(|&r| mask[r]));
        if rows.len() == start {
            return Err(KernelError::InvalidMask(format!(
                "row {b} of the mask has no valid token"
            )));
        }
        segments.push(Segment {
            start,
            len: rows.len() - start,
        });
    }
    let compact = tape.gather_rows(tokens, &rows)?;
    let out = multihead_attention_ragged(tape, compact, &segments, p)?;
    tape.scatter_rows(out, &rows, &shape)
}

/// Scalar Huber function.
pub fn huber_value(err: f64, delta: f64) -> f64 {
    if err.abs() <= delta {
        0.5 * err * err
    } else {
        delta * (err.abs() - 0.5 * delta)
    }
}
