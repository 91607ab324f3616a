use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{self, ConvGeometry};
use super::{broadcast_binary, numel, reduce_to_shape, Tensor, TensorError, TensorResult};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Relu,
    Sigmoid,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Relu(usize),
    Sigmoid(usize),
    Scale(usize, f64),
    MatMul(usize, usize),
    BatchMatMul(usize, usize),
    Conv2d {
        x: usize,
        w: usize,
        stride: usize,
        dilation: usize,
    },
    AvgPool(usize, usize),
    Softmax(usize),
    Gap(usize),
    Concat(Vec<usize>),
    WeightedSum(usize, Vec<usize>),
    Reshape(usize),
    BroadcastTo(usize),
    Select(usize, usize),
    Sum(usize),
    Mean(usize),
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::MatMul(a, b)
            | Op::BatchMatMul(a, b) => vec![*a, *b],
            Op::Conv2d { x, w, .. } => vec![*x, *w],
            Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::Scale(x, _)
            | Op::AvgPool(x, _)
            | Op::Softmax(x)
            | Op::Gap(x)
            | Op::Reshape(x)
            | Op::BroadcastTo(x)
            | Op::Select(x, _)
            | Op::Sum(x)
            | Op::Mean(x) => vec![*x],
            Op::Concat(xs) => xs.clone(),
            Op::WeightedSum(w, xs) => std::iter::once(*w).chain(xs.iter().copied()).collect(),
        }
    }
}

/// Append-only record of a forward computation.
///
/// Nodes are stored in creation order, so every node's inputs precede it and
/// backward simply walks the list in reverse. A tape built with
/// [`Tape::no_grad`] still evaluates every op but never marks anything as
/// requiring a gradient.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    grad_enabled: bool,
    values: Vec<Tensor>,
    ops: Vec<Op>,
    requires_grad: Vec<bool>,
    grads: Vec<Option<Tensor>>,
    backward_done: bool,
    counters: BTreeMap<&'static str, usize>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::with_grad(true)
    }

    /// A tape for forward-only evaluation.
    pub fn no_grad() -> Self {
        Self::with_grad(false)
    }

    fn with_grad(grad_enabled: bool) -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            grad_enabled,
            values: Vec::new(),
            ops: Vec::new(),
            requires_grad: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
            counters: BTreeMap::new(),
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Records a leaf. `requires_grad` is ignored on a no-grad tape.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        let requires = requires_grad && self.grad_enabled;
        self.push_raw(value, Op::Leaf, requires)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// The forward value of `v`. Panics if `v` belongs to another tape.
    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.tape, self.id, "variable belongs to a different tape");
        &self.values[v.index]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Gradient of the last backward pass with respect to `v`, if it
    /// participated in it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        if v.tape != self.id {
            return None;
        }
        self.grads.get(v.index).and_then(Option::as_ref)
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        v.tape == self.id && self.requires_grad[v.index]
    }

    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    /// Increments a named instrumentation counter.
    pub fn count(&mut self, name: &'static str) {
        *self.counters.entry(name).or_insert(0) += 1;
    }

    pub fn counter(&self, name: &str) -> usize {
        self.counters.get(name).copied().unwrap_or(0)
    }

    /// Hash of the sign pattern of every ReLU input on the tape. Two forward
    /// passes with equal signatures took the same linear piece of every ReLU.
    pub fn relu_signature(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for op in &self.ops {
            if let Op::Relu(x) = op {
                for &v in self.values[*x].data() {
                    hash ^= u64::from(v > 0.0);
                    hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        hash
    }

    fn check(&self, v: Var) -> TensorResult<usize> {
        if v.tape != self.id || v.index >= self.values.len() {
            return Err(TensorError::Detached);
        }
        Ok(v.index)
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires: bool) -> Var {
        self.values.push(value);
        self.ops.push(op);
        self.requires_grad.push(requires);
        Var {
            tape: self.id,
            index: self.values.len() - 1,
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires =
            self.grad_enabled && op.inputs().iter().any(|&i| self.requires_grad[i]);
        self.push_raw(value, op, requires)
    }

    pub fn elementwise(&mut self, op: ElementwiseOp, x: Var, y: Option<Var>) -> TensorResult<Var> {
        let binary = |y: Option<Var>| {
            y.ok_or_else(|| TensorError::Invalid(format!("{op:?} needs two operands")))
        };
        match op {
            ElementwiseOp::Add => self.add(x, binary(y)?),
            ElementwiseOp::Sub => self.sub(x, binary(y)?),
            ElementwiseOp::Mul => self.mul(x, binary(y)?),
            ElementwiseOp::Relu => self.relu(x),
            ElementwiseOp::Sigmoid => self.sigmoid(x),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let out = broadcast_binary("add", &self.values[ia], &self.values[ib], |x, y| x + y)?;
        Ok(self.push(out, Op::Add(ia, ib)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let out = broadcast_binary("sub", &self.values[ia], &self.values[ib], |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(ia, ib)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let out = broadcast_binary("mul", &self.values[ia], &self.values[ib], |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(ia, ib)))
    }

    pub fn relu(&mut self, x: Var) -> TensorResult<Var> {
        let ix = self.check(x)?;
        let out = self.values[ix].map(|v| v.max(0.0));
        Ok(self.push(out, Op::Relu(ix)))
    }

    pub fn sigmoid(&mut self, x: Var) -> TensorResult<Var> {
        let ix = self.check(x)?;
        let out = self.values[ix].map(sigmoid);
        Ok(self.push(out, Op::Sigmoid(ix)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> TensorResult<Var> {
        let ix = self.check(x)?;
        let out = self.values[ix].map(|v| v * factor);
        Ok(self.push(out, Op::Scale(ix, factor)))
    }

    /// `x[M×K] · w[K×N]`.
    pub fn matmul(&mut self, x: Var, w: Var) -> TensorResult<Var> {
        let (ix, iw) = (self.check(x)?, self.check(w)?);
        let (xs, ws) = (self.values[ix].shape(), self.values[iw].shape());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(TensorError::DimensionMismatch {
                op: "matmul",
                left: xs.to_vec(),
                right: ws.to_vec(),
            });
        }
        let (m, k, n) = (xs[0], xs[1], ws[1]);
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, k, n, self.values[ix].data(), false, self.values[iw].data(), false, &mut out, false);
        let out = Tensor::new(&[m, n], out)?;
        Ok(self.push(out, Op::MatMul(ix, iw)))
    }

    /// Per-batch matrix product: `x[B×M×K] · w[B×K×N] → [B×M×N]`.
    pub fn batch_matmul(&mut self, x: Var, w: Var) -> TensorResult<Var> {
        let (ix, iw) = (self.check(x)?, self.check(w)?);
        let (xs, ws) = (self.values[ix].shape(), self.values[iw].shape());
        if xs.len() != 3 || ws.len() != 3 || xs[0] != ws[0] || xs[2] != ws[1] {
            return Err(TensorError::DimensionMismatch {
                op: "batch_matmul",
                left: xs.to_vec(),
                right: ws.to_vec(),
            });
        }
        let (b, m, k, n) = (xs[0], xs[1], xs[2], ws[2]);
        let mut out = vec![0.0; b * m * n];
        let (xd, wd) = (self.values[ix].data(), self.values[iw].data());
        for i in 0..b {
            kernels::gemm(
                m,
                k,
                n,
                &xd[i * m * k..(i + 1) * m * k],
                false,
                &wd[i * k * n..(i + 1) * k * n],
                false,
                &mut out[i * m * n..(i + 1) * m * n],
                false,
            );
        }
        let out = Tensor::new(&[b, m, n], out)?;
        Ok(self.push(out, Op::BatchMatMul(ix, iw)))
    }

    /// SAME-padded dilated cross-correlation of NHWC input with
    /// `k×k×C_in×C_out` filters.
    pub fn conv2d(&mut self, x: Var, filters: Var, stride: usize, dilation: usize) -> TensorResult<Var> {
        let (ix, iw) = (self.check(x)?, self.check(filters)?);
        let (xs, ws) = (self.values[ix].shape(), self.values[iw].shape());
        if xs.len() != 4 {
            return Err(TensorError::Rank { op: "conv2d", expected: 4, shape: xs.to_vec() });
        }
        if ws.len() != 4 || ws[0] != ws[1] || ws[0] % 2 == 0 {
            return Err(TensorError::Invalid(format!(
                "conv2d: filters must be k×k×C_in×C_out with odd k, got {ws:?}"
            )));
        }
        if xs[3] != ws[2] {
            return Err(TensorError::ChannelMismatch { input: xs[3], filters: ws[2] });
        }
        if stride == 0 || dilation == 0 {
            return Err(TensorError::Invalid("conv2d: stride and dilation must be >= 1".into()));
        }
        let g = ConvGeometry::new(xs, ws[0], ws[3], stride, dilation);
        let cols = kernels::im2col(self.values[ix].data(), &g);
        let mut out = vec![0.0; g.rows() * g.out_channels];
        kernels::gemm(g.rows(), g.patch_len(), g.out_channels, &cols, false, self.values[iw].data(), false, &mut out, false);
        let out = Tensor::new(&[g.batch, g.out_height, g.out_width, g.out_channels], out)?;
        Ok(self.push(out, Op::Conv2d { x: ix, w: iw, stride, dilation }))
    }

    /// Non-overlapping `size×size` average pooling.
    pub fn avg_pool(&mut self, x: Var, size: usize) -> TensorResult<Var> {
        let ix = self.check(x)?;
        let xs = self.values[ix].shape().to_vec();
        if xs.len() != 4 {
            return Err(TensorError::Rank { op: "avg_pool", expected: 4, shape: xs });
        }
        if size == 0 || xs[1] % size != 0 || xs[2] % size != 0 {
            return Err(TensorError::Invalid(format!(
                "avg_pool: size {size} does not divide spatial dims of {xs:?}"
            )));
        }
        let data = kernels::avg_pool(self.values[ix].data(), &xs, size);
        let out = Tensor::new(&[xs[0], xs[1] / size, xs[2] / size, xs[3]], data)?;
        Ok(self.push(out, Op::AvgPool(ix, size)))
    }

    /// Max-shifted softmax over a vector.
    pub fn softmax(&mut self, x: Var) -> TensorResult<Var> {
        let ix = self.check(x)?;
        let xv = &self.values[ix];
        if xv.rank() != 1 {
            return Err(TensorError::Rank { op: "softmax", expected: 1, shape: xv.shape().to_vec() });
        }
        let out = Tensor::vector(&softmax(xv.data()));
        Ok(self.push(out, Op::Softmax(ix)))
    }

    /// Spatial mean per channel: `N×H×W×C → N×C`.
    pub fn global_avg_pool(&mut self, x: Var) -> TensorResult<Var> {
        let ix = self.check(x)?;
        let xs = self.values[ix].shape().to_vec();
        if xs.len() != 4 {
            return Err(TensorError::Rank { op: "global_avg_pool", expected: 4, shape: xs });
        }
        let (n, hw, c) = (xs[0], xs[1] * xs[2], xs[3]);
        let scale = 1.0 / hw as f64;
        let data = self.values[ix].data();
        let mut out = vec![0.0; n * c];
        for b in 0..n {
            let row = &mut out[b * c..(b + 1) * c];
            for p in 0..hw {
                let src = &data[(b * hw + p) * c..(b * hw + p + 1) * c];
                for (o, &v) in row.iter_mut().zip(src) {
                    *o += v;
                }
            }
            for o in row.iter_mut() {
                *o *= scale;
            }
        }
        let out = Tensor::new(&[n, c], out)?;
        Ok(self.push(out, Op::Gap(ix)))
    }

    /// Concatenates along the last (channel) axis in argument order.
    pub fn concat_channels(&mut self, xs: &[Var]) -> TensorResult<Var> {
        let idx = xs.iter().map(|&v| self.check(v)).collect::<TensorResult<Vec<_>>>()?;
        let first = idx
            .first()
            .map(|&i| self.values[i].shape().to_vec())
            .ok_or_else(|| TensorError::Invalid("concat of zero tensors".into()))?;
        let lead = &first[..first.len().saturating_sub(1)];
        if first.is_empty() {
            return Err(TensorError::Rank { op: "concat_channels", expected: 1, shape: first });
        }
        let mut total = 0;
        for &i in &idx {
            let s = self.values[i].shape();
            if s.len() != first.len() || &s[..s.len() - 1] != lead {
                return Err(TensorError::SpatialMismatch {
                    op: "concat_channels",
                    left: first.clone(),
                    right: s.to_vec(),
                });
            }
            total += s[s.len() - 1];
        }
        let rows = numel(lead);
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &i in &idx {
                let c = *self.values[i].shape().last().unwrap();
                data.extend_from_slice(&self.values[i].data()[r * c..(r + 1) * c]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let out = Tensor::new(&shape, data)?;
        Ok(self.push(out, Op::Concat(idx)))
    }

    /// `Σ_k w[k]·xs[k]` over equally shaped tensors, with `w` a vector.
    pub fn weighted_sum(&mut self, w: Var, xs: &[Var]) -> TensorResult<Var> {
        let iw = self.check(w)?;
        let idx = xs.iter().map(|&v| self.check(v)).collect::<TensorResult<Vec<_>>>()?;
        let wv = &self.values[iw];
        if wv.rank() != 1 || wv.len() != idx.len() || idx.is_empty() {
            return Err(TensorError::Invalid(format!(
                "weighted_sum needs one weight per input, got {:?} for {} inputs",
                wv.shape(),
                idx.len()
            )));
        }
        let shape = self.values[idx[0]].shape().to_vec();
        if let Some(&bad) = idx.iter().find(|&&i| self.values[i].shape() != shape.as_slice()) {
            return Err(TensorError::ShapeMismatch {
                op: "weighted_sum",
                left: shape,
                right: self.values[bad].shape().to_vec(),
            });
        }
        let mut data: Vec<f64> = self.values[idx[0]].data().iter().map(|&v| v * wv.data()[0]).collect();
        for (k, &i) in idx.iter().enumerate().skip(1) {
            let wk = wv.data()[k];
            for (d, &v) in data.iter_mut().zip(self.values[i].data()) {
                *d += wk * v;
            }
        }
        let out = Tensor::new(&shape, data)?;
        Ok(self.push(out, Op::WeightedSum(iw, idx)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> TensorResult<Var> {
        let ix = self.check(x)?;
        let out = self.values[ix].clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(ix)))
    }

    pub fn broadcast_to(&mut self, x: Var, shape: &[usize]) -> TensorResult<Var> {
        let ix = self.check(x)?;
        let out = super::broadcast_to(&self.values[ix], shape)?;
        Ok(self.push(out, Op::BroadcastTo(ix)))
    }

    /// Element `i` of a vector as a one-element tensor of shape `[1]`.
    pub fn select(&mut self, x: Var, i: usize) -> TensorResult<Var> {
        let ix = self.check(x)?;
        let xv = &self.values[ix];
        if xv.rank() != 1 || i >= xv.len() {
            return Err(TensorError::Invalid(format!(
                "select: index {i} invalid for shape {:?}",
                xv.shape()
            )));
        }
        let out = Tensor::vector(&[xv.data()[i]]);
        Ok(self.push(out, Op::Select(ix, i)))
    }

    pub fn sum(&mut self, x: Var) -> TensorResult<Var> {
        let ix = self.check(x)?;
        let out = Tensor::scalar(self.values[ix].sum());
        Ok(self.push(out, Op::Sum(ix)))
    }

    pub fn mean(&mut self, x: Var) -> TensorResult<Var> {
        let ix = self.check(x)?;
        let n = self.values[ix].len().max(1) as f64;
        let out = Tensor::scalar(self.values[ix].sum() / n);
        Ok(self.push(out, Op::Mean(ix)))
    }

    /// Reverse-mode sweep from a scalar `loss`. Afterwards [`Tape::grad`]
    /// returns `dloss/dv` for every node that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> TensorResult<()> {
        let il = self.check(loss)?;
        if self.values[il].len() != 1 {
            return Err(TensorError::NonScalarLoss(self.values[il].shape().to_vec()));
        }
        if self.backward_done {
            return Err(TensorError::BackwardAlreadyRun);
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.values.len()];
        if self.requires_grad[il] {
            grads[il] = Some(Tensor::full(self.values[il].shape(), 1.0));
        }
        for i in (0..=il).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !matches!(self.ops[i], Op::Leaf) {
                self.propagate(i, &g, &mut grads)?;
            }
            grads[i] = Some(g);
        }
        // Intermediate nodes that do not require grad never receive one.
        for (slot, &req) in grads.iter_mut().zip(&self.requires_grad) {
            if !req {
                *slot = None;
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], target: usize, contribution: Tensor) {
        if !self.requires_grad[target] {
            return;
        }
        match &mut grads[target] {
            Some(existing) => {
                for (e, c) in existing.data_mut().iter_mut().zip(contribution.data()) {
                    *e += c;
                }
            }
            slot @ None => *slot = Some(contribution),
        }
    }

    fn propagate(&self, node: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> TensorResult<()> {
        let val = |i: usize| &self.values[i];
        let req = |i: usize| self.requires_grad[i];
        match self.ops[node].clone() {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if req(a) {
                    self.accumulate(grads, a, reduce_to_shape(g, val(a).shape()));
                }
                if req(b) {
                    self.accumulate(grads, b, reduce_to_shape(g, val(b).shape()));
                }
            }
            Op::Sub(a, b) => {
                if req(a) {
                    self.accumulate(grads, a, reduce_to_shape(g, val(a).shape()));
                }
                if req(b) {
                    let gb = reduce_to_shape(g, val(b).shape()).map(|v| -v);
                    self.accumulate(grads, b, gb);
                }
            }
            Op::Mul(a, b) => {
                if req(a) {
                    let prod = broadcast_binary("mul", g, val(b), |x, y| x * y)?;
                    self.accumulate(grads, a, reduce_to_shape(&prod, val(a).shape()));
                }
                if req(b) {
                    let prod = broadcast_binary("mul", g, val(a), |x, y| x * y)?;
                    self.accumulate(grads, b, reduce_to_shape(&prod, val(b).shape()));
                }
            }
            Op::Relu(x) => {
                let gx = broadcast_binary("relu", g, val(x), |gv, xv| if xv > 0.0 { gv } else { 0.0 })?;
                self.accumulate(grads, x, gx);
            }
            Op::Sigmoid(x) => {
                let y = val(node);
                let gx = broadcast_binary("sigmoid", g, y, |gv, yv| gv * yv * (1.0 - yv))?;
                self.accumulate(grads, x, gx);
            }
            Op::Scale(x, factor) => self.accumulate(grads, x, g.map(|v| v * factor)),
            Op::MatMul(x, w) => {
                let (m, k) = (val(x).shape()[0], val(x).shape()[1]);
                let n = val(w).shape()[1];
                if req(x) {
                    let mut gx = vec![0.0; m * k];
                    kernels::gemm(m, n, k, g.data(), false, val(w).data(), true, &mut gx, false);
                    self.accumulate(grads, x, Tensor::new(&[m, k], gx)?);
                }
                if req(w) {
                    let mut gw = vec![0.0; k * n];
                    kernels::gemm(k, m, n, val(x).data(), true, g.data(), false, &mut gw, false);
                    self.accumulate(grads, w, Tensor::new(&[k, n], gw)?);
                }
            }
            Op::BatchMatMul(x, w) => {
                let xs = val(x).shape();
                let (b, m, k) = (xs[0], xs[1], xs[2]);
                let n = val(w).shape()[2];
                let (xd, wd, gd) = (val(x).data(), val(w).data(), g.data());
                if req(x) {
                    let mut gx = vec![0.0; b * m * k];
                    for i in 0..b {
                        kernels::gemm(m, n, k, &gd[i * m * n..(i + 1) * m * n], false, &wd[i * k * n..(i + 1) * k * n], true, &mut gx[i * m * k..(i + 1) * m * k], false);
                    }
                    self.accumulate(grads, x, Tensor::new(&[b, m, k], gx)?);
                }
                if req(w) {
                    let mut gw = vec![0.0; b * k * n];
                    for i in 0..b {
                        kernels::gemm(k, m, n, &xd[i * m * k..(i + 1) * m * k], true, &gd[i * m * n..(i + 1) * m * n], false, &mut gw[i * k * n..(i + 1) * k * n], false);
                    }
                    self.accumulate(grads, w, Tensor::new(&[b, k, n], gw)?);
                }
            }
            Op::Conv2d { x, w, stride, dilation } => {
                let ws = val(w).shape().to_vec();
                let geom = ConvGeometry::new(val(x).shape(), ws[0], ws[3], stride, dilation);
                if req(w) {
                    let cols = kernels::im2col(val(x).data(), &geom);
                    let mut gw = vec![0.0; geom.patch_len() * geom.out_channels];
                    kernels::gemm(geom.patch_len(), geom.rows(), geom.out_channels, &cols, true, g.data(), false, &mut gw, false);
                    self.accumulate(grads, w, Tensor::new(&ws, gw)?);
                }
                if req(x) {
                    let mut gcols = vec![0.0; geom.rows() * geom.patch_len()];
                    kernels::gemm(geom.rows(), geom.out_channels, geom.patch_len(), g.data(), false, val(w).data(), true, &mut gcols, false);
                    let gx = kernels::col2im(&gcols, &geom);
                    self.accumulate(grads, x, Tensor::new(val(x).shape(), gx)?);
                }
            }
            Op::AvgPool(x, size) => {
                let gx = kernels::avg_pool_backward(g.data(), val(x).shape(), size);
                self.accumulate(grads, x, Tensor::new(val(x).shape(), gx)?);
            }
            Op::Softmax(x) => {
                let y = val(node).data();
                let dot: f64 = g.data().iter().zip(y).map(|(a, b)| a * b).sum();
                let gx = y.iter().zip(g.data()).map(|(&yv, &gv)| yv * (gv - dot)).collect::<Vec<_>>();
                self.accumulate(grads, x, Tensor::vector(&gx));
            }
            Op::Gap(x) => {
                let xs = val(x).shape();
                let (n, hw, c) = (xs[0], xs[1] * xs[2], xs[3]);
                let scale = 1.0 / hw as f64;
                let mut gx = vec![0.0; n * hw * c];
                for b in 0..n {
                    let src = &g.data()[b * c..(b + 1) * c];
                    for p in 0..hw {
                        let dst = &mut gx[(b * hw + p) * c..(b * hw + p + 1) * c];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d = s * scale;
                        }
                    }
                }
                self.accumulate(grads, x, Tensor::new(xs, gx)?);
            }
            Op::Concat(inputs) => {
                let total = *g.shape().last().unwrap();
                let rows = g.len() / total.max(1);
                let mut offset = 0;
                for &i in &inputs {
                    let c = *val(i).shape().last().unwrap();
                    if req(i) {
                        let mut gi = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            gi.extend_from_slice(&g.data()[r * total + offset..r * total + offset + c]);
                        }
                        self.accumulate(grads, i, Tensor::new(val(i).shape(), gi)?);
                    }
                    offset += c;
                }
            }
            Op::WeightedSum(w, inputs) => {
                let wd = val(w).data().to_vec();
                if req(w) {
                    let gw: Vec<f64> = inputs
                        .iter()
                        .map(|&i| g.data().iter().zip(val(i).data()).map(|(a, b)| a * b).sum())
                        .collect();
                    self.accumulate(grads, w, Tensor::vector(&gw));
                }
                for (k, &i) in inputs.iter().enumerate() {
                    if req(i) {
                        self.accumulate(grads, i, g.map(|v| v * wd[k]));
                    }
                }
            }
            Op::Reshape(x) => self.accumulate(grads, x, g.clone().reshape(val(x).shape())?),
            Op::BroadcastTo(x) => self.accumulate(grads, x, reduce_to_shape(g, val(x).shape())),
            Op::Select(x, i) => {
                let mut gx = Tensor::zeros(val(x).shape());
                gx.data_mut()[i] = g.data()[0];
                self.accumulate(grads, x, gx);
            }
            Op::Sum(x) => self.accumulate(grads, x, Tensor::full(val(x).shape(), g.data()[0])),
            Op::Mean(x) => {
                let n = val(x).len().max(1) as f64;
                self.accumulate(grads, x, Tensor::full(val(x).shape(), g.data()[0] / n));
            }
        }
        Ok(())
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
