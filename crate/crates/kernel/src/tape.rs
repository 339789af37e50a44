use crate::tensor::{axpy, dot, gemm_nn, gemm_nt, gemm_tn, Real, Tensor};
use crate::KernelError;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Contiguous run of rows belonging to one sample in a ragged batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
}

/// Which piece of the Huber function an element was evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HuberBranch {
    Quadratic,
    LinearPositive,
    LinearNegative,
}

/// Piecewise branch decisions taken during a forward pass.
///
/// Replaying a log evaluates ReLU and Huber on the recorded pieces instead of
/// re-deciding them, which lets finite-difference probes stay on the same
/// smooth piece as the point whose analytic gradient is being checked.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BranchLog {
    relu: Vec<Vec<bool>>,
    huber: Vec<Vec<HuberBranch>>,
}

impl BranchLog {
    pub fn relu_masks(&self) -> &[Vec<bool>] {
        &self.relu
    }
}

#[derive(Debug)]
enum Op<T: Real> {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Relu {
        x: Var,
        mask: Vec<bool>,
    },
    Mul {
        x: Var,
        factor: Vec<T>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        segments: Vec<Segment>,
        heads: usize,
        probs: Vec<T>,
    },
    SegmentMean {
        x: Var,
        segments: Vec<Segment>,
    },
    GatherRows {
        x: Var,
        rows: Vec<usize>,
    },
    ScatterRows {
        x: Var,
        rows: Vec<usize>,
    },
    Pick {
        x: Var,
        idx: Vec<usize>,
    },
    Huber {
        pred: Var,
        target: Vec<T>,
        delta: T,
        branch: Vec<HuberBranch>,
    },
    Sum {
        x: Var,
    },
}

#[derive(Debug)]
struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a forward computation for reverse-mode differentiation.
#[derive(Debug)]
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
    log: BranchLog,
    replay: Option<(BranchLog, usize, usize)>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            log: BranchLog::default(),
            replay: None,
        }
    }

    /// A tape that evaluates every ReLU and Huber node on the pieces recorded in `log`.
    pub fn replaying(log: BranchLog) -> Self {
        Self {
            nodes: Vec::new(),
            log: BranchLog::default(),
            replay: Some((log, 0, 0)),
        }
    }

    pub fn branch_log(&self) -> &BranchLog {
        &self.log
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn check(&self, v: Var) -> Result<(), KernelError> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(KernelError::Graph(format!("node {} is not on this tape", v.0)))
        }
    }

    /// Trainable leaf: gradients flow into it.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Constant leaf: no gradient is accumulated for it.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// `x[.., in] * w[in, out] + b[out]`, treating every leading dimension of `x` as rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, KernelError> {
        self.check(x)?;
        self.check(w)?;
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;
        if wv.shape().len() != 2 || xv.cols() != wv.shape()[0] {
            return Err(KernelError::Dimension(format!(
                "linear: input {:?} vs weight {:?}",
                xv.shape(),
                wv.shape()
            )));
        }
        let (m, k, n) = (xv.rows(), wv.shape()[0], wv.shape()[1]);
        let mut out = vec![T::zero(); m * n];
        if let Some(b) = b {
            self.check(b)?;
            let bv = self.nodes[b.0].value.data();
            if bv.len() != n {
                return Err(KernelError::Dimension(format!(
                    "linear: bias of length {} for {n} outputs",
                    bv.len()
                )));
            }
            for row in out.chunks_mut(n) {
                row.copy_from_slice(bv);
            }
        }
        gemm_nn(xv.data(), wv.data(), m, k, n, &mut out);
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        let value = Tensor::from_vec(&shape, out)?;
        Ok(self.push(value, Op::Linear { x, w, b }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, KernelError> {
        self.check(x)?;
        let xv = &self.nodes[x.0].value;
        let mask: Vec<bool> = match &mut self.replay {
            Some((log, cursor, _)) => {
                let m = log.relu.get(*cursor).cloned().ok_or_else(|| {
                    KernelError::Graph("replayed branch log has too few relu entries".into())
                })?;
                if m.len() != xv.len() {
                    return Err(KernelError::Graph("replayed relu mask has wrong length".into()));
                }
                *cursor += 1;
                m
            }
            None => xv.data().iter().map(|&a| a > T::zero()).collect(),
        };
        let data = xv
            .data()
            .iter()
            .zip(&mask)
            .map(|(&a, &on)| if on { a } else { T::zero() })
            .collect();
        let value = Tensor::from_vec(xv.shape(), data)?;
        self.log.relu.push(mask.clone());
        let rg = self.rg(x);
        Ok(self.push(value, Op::Relu { x, mask }, rg))
    }

    /// Elementwise product with a constant factor of the same length.
    pub fn mul_const(&mut self, x: Var, factor: Vec<T>) -> Result<Var, KernelError> {
        self.check(x)?;
        let xv = &self.nodes[x.0].value;
        if factor.len() != xv.len() {
            return Err(KernelError::Dimension(format!(
                "mul_const: factor of length {} for {:?}",
                factor.len(),
                xv.shape()
            )));
        }
        let data = xv.data().iter().zip(&factor).map(|(&a, &f)| a * f).collect();
        let value = Tensor::from_vec(xv.shape(), data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Mul { x, factor }, rg))
    }

    /// Per-feature normalization with the given statistics (eval mode) or the
    /// statistics of `x` itself (train mode). Returns the node together with
    /// the batch mean and biased variance used.
    pub(crate) fn batch_norm_node(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: Option<(&[T], &[T])>,
        eps: T,
    ) -> Result<(Var, Vec<T>, Vec<T>), KernelError> {
        self.check(x)?;
        self.check(gamma)?;
        self.check(beta)?;
        let xv = &self.nodes[x.0].value;
        let (rows, f) = (xv.rows(), xv.cols());
        let g = self.nodes[gamma.0].value.data();
        let bt = self.nodes[beta.0].value.data();
        if g.len() != f || bt.len() != f {
            return Err(KernelError::Dimension(format!(
                "batch norm over {f} features with gamma {} / beta {}",
                g.len(),
                bt.len()
            )));
        }
        let train = stats.is_none();
        let (mean, var) = match stats {
            Some((m, v)) => {
                if m.len() != f || v.len() != f {
                    return Err(KernelError::Dimension("running statistics length".into()));
                }
                (m.to_vec(), v.to_vec())
            }
            None => {
                if rows < 2 {
                    return Err(KernelError::InvalidBatch(format!(
                        "train-mode batch norm needs at least 2 rows, got {rows}"
                    )));
                }
                let n = T::lit(rows as f64);
                let mut mean = vec![T::zero(); f];
                for r in 0..rows {
                    for (m, &a) in mean.iter_mut().zip(xv.row(r)) {
                        *m += a;
                    }
                }
                mean.iter_mut().for_each(|m| *m = *m / n);
                let mut var = vec![T::zero(); f];
                for r in 0..rows {
                    for ((s, &a), &m) in var.iter_mut().zip(xv.row(r)).zip(&mean) {
                        *s += (a - m) * (a - m);
                    }
                }
                var.iter_mut().for_each(|s| *s = *s / n);
                (mean, var)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); rows * f];
        let mut out = vec![T::zero(); rows * f];
        for r in 0..rows {
            let xr = xv.row(r);
            for j in 0..f {
                let h = (xr[j] - mean[j]) * inv_std[j];
                xhat[r * f + j] = h;
                out[r * f + j] = g[j] * h + bt[j];
            }
        }
        let value = Tensor::from_vec(xv.shape(), out)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let node = self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            rg,
        );
        Ok((node, mean, var))
    }

    /// Scaled dot-product self-attention within each segment, per head.
    /// `q`, `k`, `v` are `[rows, dim]` with `dim` divisible by `heads`.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        segments: &[Segment],
        heads: usize,
    ) -> Result<Var, KernelError> {
        for x in [q, k, v] {
            self.check(x)?;
        }
        let (qv, kv, vv) = (
            &self.nodes[q.0].value,
            &self.nodes[k.0].value,
            &self.nodes[v.0].value,
        );
        if qv.shape() != kv.shape() || qv.shape() != vv.shape() || qv.shape().len() != 2 {
            return Err(KernelError::Dimension("attention q/k/v shapes differ".into()));
        }
        let (rows, dm) = (qv.rows(), qv.cols());
        if heads == 0 || dm % heads != 0 {
            return Err(KernelError::Dimension(format!(
                "model dim {dm} not divisible into {heads} heads"
            )));
        }
        check_segments(segments, rows)?;
        let dh = dm / heads;
        let scale = T::one() / T::lit(dh as f64).sqrt();
        let mut out = vec![T::zero(); rows * dm];
        let mut probs = Vec::new();
        let mut scores = Vec::new();
        for seg in segments {
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                for i in seg.start..seg.start + seg.len {
                    let qi = &qv.row(i)[cols.clone()];
                    scores.clear();
                    for j in seg.start..seg.start + seg.len {
                        scores.push(dot(qi, &kv.row(j)[cols.clone()]) * scale);
                    }
                    let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
                    let mut total = T::zero();
                    for s in scores.iter_mut() {
                        *s = (*s - max).exp();
                        total += *s;
                    }
                    let orow = &mut out[i * dm + h * dh..i * dm + (h + 1) * dh];
                    for (jj, s) in scores.iter().enumerate() {
                        let p = *s / total;
                        probs.push(p);
                        axpy(p, &vv.row(seg.start + jj)[cols.clone()], orow);
                    }
                }
            }
        }
        let value = Tensor::from_vec(&[rows, dm], out)?;
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        Ok(self.push(
            value,
            Op::Attention {
                q,
                k,
                v,
                segments: segments.to_vec(),
                heads,
                probs,
            },
            rg,
        ))
    }

    /// Mean over the rows of each segment: `[rows, c] -> [segments, c]`.
    pub fn segment_mean(&mut self, x: Var, segments: &[Segment]) -> Result<Var, KernelError> {
        self.check(x)?;
        let xv = &self.nodes[x.0].value;
        let c = xv.cols();
        check_segments(segments, xv.rows())?;
        let mut out = vec![T::zero(); segments.len() * c];
        for (s, seg) in segments.iter().enumerate() {
            if seg.len == 0 {
                return Err(KernelError::InvalidMask(format!("segment {s} is empty")));
            }
            let inv = T::one() / T::lit(seg.len as f64);
            let o = &mut out[s * c..(s + 1) * c];
            for r in seg.start..seg.start + seg.len {
                axpy(inv, xv.row(r), o);
            }
        }
        let value = Tensor::from_vec(&[segments.len(), c], out)?;
        let rg = self.rg(x);
        Ok(self.push(
            value,
            Op::SegmentMean {
                x,
                segments: segments.to_vec(),
            },
            rg,
        ))
    }

    /// Selects rows of a 2-D view of `x`.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var, KernelError> {
        self.check(x)?;
        let xv = &self.nodes[x.0].value;
        let c = xv.cols();
        let mut out = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            if r >= xv.rows() {
                return Err(KernelError::Dimension(format!("row {r} out of range")));
            }
            out.extend_from_slice(xv.row(r));
        }
        let value = Tensor::from_vec(&[rows.len(), c], out)?;
        let rg = self.rg(x);
        Ok(self.push(
            value,
            Op::GatherRows {
                x,
                rows: rows.to_vec(),
            },
            rg,
        ))
    }

    /// Inverse of [`Tape::gather_rows`]: places row `i` of `x` at `rows[i]` in a
    /// zero tensor of the given shape.
    pub fn scatter_rows(
        &mut self,
        x: Var,
        rows: &[usize],
        shape: &[usize],
    ) -> Result<Var, KernelError> {
        self.check(x)?;
        let xv = &self.nodes[x.0].value;
        let mut out = Tensor::zeros(shape);
        let c = out.cols();
        if xv.cols() != c || xv.rows() != rows.len() {
            return Err(KernelError::Dimension("scatter_rows shape mismatch".into()));
        }
        for (i, &r) in rows.iter().enumerate() {
            if r >= out.rows() {
                return Err(KernelError::Dimension(format!("row {r} out of range")));
            }
            out.data_mut()[r * c..(r + 1) * c].copy_from_slice(xv.row(i));
        }
        let rg = self.rg(x);
        Ok(self.push(
            out,
            Op::ScatterRows {
                x,
                rows: rows.to_vec(),
            },
            rg,
        ))
    }

    /// `out[i] = x[i, idx[i]]`.
    pub fn pick(&mut self, x: Var, idx: &[usize]) -> Result<Var, KernelError> {
        self.check(x)?;
        let xv = &self.nodes[x.0].value;
        let c = xv.cols();
        if idx.len() != xv.rows() || idx.iter().any(|&i| i >= c) {
            return Err(KernelError::Dimension("pick indices do not match".into()));
        }
        let data = idx
            .iter()
            .enumerate()
            .map(|(r, &i)| xv.data()[r * c + i])
            .collect();
        let value = Tensor::from_vec(&[idx.len()], data)?;
        let rg = self.rg(x);
        Ok(self.push(
            value,
            Op::Pick {
                x,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    /// Mean Huber loss of `pred` against a constant target.
    pub fn huber(&mut self, pred: Var, target: &[T], delta: T) -> Result<Var, KernelError> {
        self.check(pred)?;
        let pv = &self.nodes[pred.0].value;
        if pv.len() != target.len() || target.is_empty() {
            return Err(KernelError::Dimension(format!(
                "huber: {} predictions vs {} targets",
                pv.len(),
                target.len()
            )));
        }
        let branch: Vec<HuberBranch> = match &mut self.replay {
            Some((log, _, cursor)) => {
                let b = log.huber.get(*cursor).cloned().ok_or_else(|| {
                    KernelError::Graph("replayed branch log has too few huber entries".into())
                })?;
                if b.len() != pv.len() {
                    return Err(KernelError::Graph("replayed huber log has wrong length".into()));
                }
                *cursor += 1;
                b
            }
            None => pv
                .data()
                .iter()
                .zip(target)
                .map(|(&p, &y)| {
                    let e = p - y;
                    if e > delta {
                        HuberBranch::LinearPositive
                    } else if e < -delta {
                        HuberBranch::LinearNegative
                    } else {
                        HuberBranch::Quadratic
                    }
                })
                .collect(),
        };
        let n = T::lit(target.len() as f64);
        let total: T = pv
            .data()
            .iter()
            .zip(target)
            .zip(&branch)
            .map(|((&p, &y), &b)| huber_piece(p - y, delta, b))
            .sum();
        self.log.huber.push(branch.clone());
        let rg = self.rg(pred);
        Ok(self.push(
            Tensor::scalar(total / n),
            Op::Huber {
                pred,
                target: target.to_vec(),
                delta,
                branch,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, KernelError> {
        self.check(x)?;
        let s = self.nodes[x.0].value.data().iter().copied().sum();
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(s), Op::Sum { x }, rg))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, KernelError> {
        if loss.0 >= self.nodes.len() {
            return Err(KernelError::Graph(
                "backward called on a node with no recorded forward pass".into(),
            ));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(KernelError::Graph(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.nodes[loss.0].value.shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &gy, &mut grads);
            grads[idx] = Some(gy);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, gy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (val(*x), val(*w));
                let (m, k, n) = (xv.rows(), wv.shape()[0], wv.shape()[1]);
                if self.rg(*x) {
                    let g = grad_slot(grads, *x, xv.shape());
                    gemm_nt(gy.data(), wv.data(), m, n, k, g.data_mut());
                }
                if self.rg(*w) {
                    let g = grad_slot(grads, *w, wv.shape());
                    gemm_tn(xv.data(), gy.data(), m, k, n, g.data_mut());
                }
                if let Some(b) = b {
                    if self.rg(*b) {
                        let g = grad_slot(grads, *b, val(*b).shape());
                        for row in gy.data().chunks(n) {
                            axpy(T::one(), row, g.data_mut());
                        }
                    }
                }
            }
            Op::Relu { x, mask } => {
                if self.rg(*x) {
                    let g = grad_slot(grads, *x, val(*x).shape());
                    for ((gi, &d), &on) in g.data_mut().iter_mut().zip(gy.data()).zip(mask) {
                        if on {
                            *gi += d;
                        }
                    }
                }
            }
            Op::Mul { x, factor } => {
                if self.rg(*x) {
                    let g = grad_slot(grads, *x, val(*x).shape());
                    for ((gi, &d), &f) in g.data_mut().iter_mut().zip(gy.data()).zip(factor) {
                        *gi += d * f;
                    }
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let xv = val(*x);
                let (rows, f) = (xv.rows(), xv.cols());
                let gv = val(*gamma).data();
                if self.rg(*gamma) {
                    let g = grad_slot(grads, *gamma, &[f]);
                    for r in 0..rows {
                        for j in 0..f {
                            g.data_mut()[j] += gy.data()[r * f + j] * xhat[r * f + j];
                        }
                    }
                }
                if self.rg(*beta) {
                    let g = grad_slot(grads, *beta, &[f]);
                    for row in gy.data().chunks(f) {
                        axpy(T::one(), row, g.data_mut());
                    }
                }
                if self.rg(*x) {
                    let g = grad_slot(grads, *x, xv.shape());
                    if *train {
                        let n = T::lit(rows as f64);
                        let mut s1 = vec![T::zero(); f];
                        let mut s2 = vec![T::zero(); f];
                        for r in 0..rows {
                            for j in 0..f {
                                let dxh = gy.data()[r * f + j] * gv[j];
                                s1[j] += dxh;
                                s2[j] += dxh * xhat[r * f + j];
                            }
                        }
                        for r in 0..rows {
                            for j in 0..f {
                                let dxh = gy.data()[r * f + j] * gv[j];
                                g.data_mut()[r * f + j] += inv_std[j] / n
                                    * (n * dxh - s1[j] - xhat[r * f + j] * s2[j]);
                            }
                        }
                    } else {
                        for r in 0..rows {
                            for j in 0..f {
                                g.data_mut()[r * f + j] +=
                                    gy.data()[r * f + j] * gv[j] * inv_std[j];
                            }
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                segments,
                heads,
                probs,
            } => {
                let (qv, kv, vv) = (val(*q), val(*k), val(*v));
                let (rows, dm) = (qv.rows(), qv.cols());
                let dh = dm / heads;
                let scale = T::one() / T::lit(dh as f64).sqrt();
                let mut dq = Tensor::<T>::zeros(&[rows, dm]);
                let mut dk = Tensor::<T>::zeros(&[rows, dm]);
                let mut dv = Tensor::<T>::zeros(&[rows, dm]);
                let mut offset = 0;
                let mut dp = Vec::new();
                for seg in segments {
                    let l = seg.len;
                    for h in 0..*heads {
                        let c0 = h * dh;
                        for i in 0..l {
                            let ri = seg.start + i;
                            let p = &probs[offset..offset + l];
                            offset += l;
                            let gyi = &gy.row(ri)[c0..c0 + dh];
                            dp.clear();
                            for j in 0..l {
                                let rj = seg.start + j;
                                dp.push(dot(gyi, &vv.row(rj)[c0..c0 + dh]));
                                axpy(p[j], gyi, &mut dv.data_mut()[rj * dm + c0..rj * dm + c0 + dh]);
                            }
                            let s: T = p.iter().zip(&dp).map(|(&a, &b)| a * b).sum();
                            for j in 0..l {
                                let rj = seg.start + j;
                                let ds = p[j] * (dp[j] - s) * scale;
                                if ds == T::zero() {
                                    continue;
                                }
                                axpy(
                                    ds,
                                    &kv.row(rj)[c0..c0 + dh],
                                    &mut dq.data_mut()[ri * dm + c0..ri * dm + c0 + dh],
                                );
                                axpy(
                                    ds,
                                    &qv.row(ri)[c0..c0 + dh],
                                    &mut dk.data_mut()[rj * dm + c0..rj * dm + c0 + dh],
                                );
                            }
                        }
                    }
                }
                for (var, d) in [(*q, dq), (*k, dk), (*v, dv)] {
                    if self.rg(var) {
                        let g = grad_slot(grads, var, &[rows, dm]);
                        axpy(T::one(), d.data(), g.data_mut());
                    }
                }
            }
            Op::SegmentMean { x, segments } => {
                if self.rg(*x) {
                    let xv = val(*x);
                    let c = xv.cols();
                    let g = grad_slot(grads, *x, xv.shape());
                    for (s, seg) in segments.iter().enumerate() {
                        let inv = T::one() / T::lit(seg.len as f64);
                        for r in seg.start..seg.start + seg.len {
                            axpy(inv, gy.row(s), &mut g.data_mut()[r * c..(r + 1) * c]);
                        }
                    }
                }
            }
            Op::GatherRows { x, rows } => {
                if self.rg(*x) {
                    let xv = val(*x);
                    let c = xv.cols();
                    let g = grad_slot(grads, *x, xv.shape());
                    for (i, &r) in rows.iter().enumerate() {
                        axpy(T::one(), gy.row(i), &mut g.data_mut()[r * c..(r + 1) * c]);
                    }
                }
            }
            Op::ScatterRows { x, rows } => {
                if self.rg(*x) {
                    let xv = val(*x);
                    let c = xv.cols();
                    let g = grad_slot(grads, *x, xv.shape());
                    for (i, &r) in rows.iter().enumerate() {
                        axpy(T::one(), gy.row(r), &mut g.data_mut()[i * c..(i + 1) * c]);
                    }
                }
            }
            Op::Pick { x, idx } => {
                if self.rg(*x) {
                    let xv = val(*x);
                    let c = xv.cols();
                    let g = grad_slot(grads, *x, xv.shape());
                    for (r, &i) in idx.iter().enumerate() {
                        g.data_mut()[r * c + i] += gy.data()[r];
                    }
                }
            }
            Op::Huber {
                pred,
                target,
                delta,
                branch,
            } => {
                if self.rg(*pred) {
                    let pv = val(*pred);
                    let scale = gy.data()[0] / T::lit(target.len() as f64);
                    let g = grad_slot(grads, *pred, pv.shape());
                    for (i, (gi, &b)) in g.data_mut().iter_mut().zip(branch).enumerate() {
                        let d = match b {
                            HuberBranch::Quadratic => pv.data()[i] - target[i],
                            HuberBranch::LinearPositive => *delta,
                            HuberBranch::LinearNegative => -*delta,
                        };
                        *gi += d * scale;
                    }
                }
            }
            Op::Sum { x } => {
                if self.rg(*x) {
                    let g = grad_slot(grads, *x, val(*x).shape());
                    let d = gy.data()[0];
                    g.data_mut().iter_mut().for_each(|gi| *gi += d);
                }
            }
        }
    }
}

fn huber_piece<T: Real>(e: T, delta: T, b: HuberBranch) -> T {
    let half = T::lit(0.5);
    match b {
        HuberBranch::Quadratic => half * e * e,
        HuberBranch::LinearPositive => delta * (e - half * delta),
        HuberBranch::LinearNegative => delta * (-e - half * delta),
    }
}

fn check_segments(segments: &[Segment], rows: usize) -> Result<(), KernelError> {
    for s in segments {
        if s.start + s.len > rows {
            return Err(KernelError::Dimension(format!(
                "segment {}..{} exceeds {rows} rows",
                s.start,
                s.start + s.len
            )));
        }
    }
    Ok(())
}

fn grad_slot<'a, T: Real>(
    grads: &'a mut [Option<Tensor<T>>],
    v: Var,
    shape: &[usize],
) -> &'a mut Tensor<T> {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(shape))
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients<T: Real = f32> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of `shape` when the loss does not depend on it.
    pub fn take_or_zeros(&mut self, v: Var, shape: &[usize]) -> Tensor<T> {
        self.grads
            .get_mut(v.0)
            .and_then(|g| g.take())
            .unwrap_or_else(|| Tensor::zeros(shape))
    }
}
