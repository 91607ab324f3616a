//! Dense fp64 tensors and a reverse-mode differentiation tape.
//!
//! Layout is row-major and channels-last: feature maps are `N×H×W×C`,
//! convolution filters are `k×k×C_in×C_out`.

pub mod gradcheck;
mod kernels;
mod tape;

pub use kernels::{conv_output_size, same_padding};
pub use tape::{sigmoid as sigmoid_value, softmax as softmax_values, ElementwiseOp, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: inner dimensions disagree ({left:?} x {right:?})")]
    DimensionMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("conv2d: input has {input} channels but filters expect {filters}")]
    ChannelMismatch { input: usize, filters: usize },
    #[error("{op}: spatial dimensions differ ({left:?} vs {right:?})")]
    SpatialMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("tensor does not belong to this tape")]
    Detached,
    #[error("backward already ran on this tape; call reset_grads first")]
    BackwardAlreadyRun,
    #[error("{0}")]
    Invalid(String),
}

pub type TensorResult<T> = Result<T, TensorError>;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> TensorResult<Self> {
        if numel(shape) != data.len() {
            return Err(TensorError::DataLength {
                shape: shape.to_vec(),
                len: data.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel(shape)],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(values: &[f64]) -> Self {
        Self {
            shape: vec![values.len()],
            data: values.to_vec(),
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: (0..numel(shape)).map(&mut f).collect(),
        }
    }

    /// Identity matrix of size `n×n`.
    pub fn eye(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn reshape(mut self, shape: &[usize]) -> TensorResult<Self> {
        if numel(shape) != self.data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                left: self.shape,
                right: shape.to_vec(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut flat = 0;
        for (i, (&ix, &dim)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < dim, "index {ix} out of range for axis {i} of size {dim}");
            flat = flat * dim + ix;
        }
        self.data[flat]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Repeats every slice along the leading axis `times` times in place, so
    /// `[a, b]` becomes `[a, a, b, b]` for `times == 2`.
    pub fn repeat_rows(&self, times: usize) -> Self {
        let rows = self.shape.first().copied().unwrap_or(1);
        let row_len = if rows == 0 { 0 } else { self.data.len() / rows };
        let mut data = Vec::with_capacity(self.data.len() * times);
        for row in self.data.chunks(row_len.max(1)) {
            for _ in 0..times {
                data.extend_from_slice(row);
            }
        }
        let mut shape = self.shape.clone();
        if let Some(first) = shape.first_mut() {
            *first *= times;
        }
        Self { shape, data }
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[&Tensor]) -> TensorResult<Self> {
        let first = items
            .first()
            .ok_or_else(|| TensorError::Invalid("stack of zero tensors".into()))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(TensorError::ShapeMismatch {
                    op: "stack",
                    left: first.shape.clone(),
                    right: t.shape.clone(),
                });
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Self { shape, data })
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff on different shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Right-aligned broadcast of two shapes; a size-1 axis stretches.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` viewed inside `out_shape`, zero along stretched axes.
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let offset = rank - shape.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i + offset] = if shape[i] == 1 && out_shape[i + offset] != 1 {
            0
        } else {
            acc
        };
        acc *= shape[i];
    }
    strides
}

/// Visits every output position with the matching flat offsets into `a` and
/// `b`. The innermost axis is handed over as a run to keep the loop tight.
fn for_each_broadcast(
    out_shape: &[usize],
    a_strides: &[usize],
    b_strides: &[usize],
    mut f: impl FnMut(usize, usize, usize, usize, usize, usize),
) {
    let rank = out_shape.len();
    if numel(out_shape) == 0 {
        return;
    }
    if rank == 0 {
        f(0, 0, 0, 1, 0, 0);
        return;
    }
    let inner = out_shape[rank - 1];
    let (sa, sb) = (a_strides[rank - 1], b_strides[rank - 1]);
    let outer: usize = out_shape[..rank - 1].iter().product();
    let mut counter = vec![0usize; rank - 1];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in 0..outer {
        f(o * inner, ia, ib, inner, sa, sb);
        for axis in (0..rank - 1).rev() {
            counter[axis] += 1;
            ia += a_strides[axis];
            ib += b_strides[axis];
            if counter[axis] < out_shape[axis] {
                break;
            }
            ia -= a_strides[axis] * out_shape[axis];
            ib -= b_strides[axis] * out_shape[axis];
            counter[axis] = 0;
        }
    }
}

pub(crate) fn broadcast_binary(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> TensorResult<Tensor> {
    if a.shape == b.shape {
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Tensor {
            shape: a.shape.clone(),
            data,
        });
    }
    let out_shape =
        broadcast_shape(&a.shape, &b.shape).ok_or_else(|| TensorError::ShapeMismatch {
            op,
            left: a.shape.clone(),
            right: b.shape.clone(),
        })?;
    let a_strides = broadcast_strides(&a.shape, &out_shape);
    let b_strides = broadcast_strides(&b.shape, &out_shape);
    if b.data.len() == 1 && out_shape == a.shape {
        let y = b.data[0];
        let data = a.data.iter().map(|&x| f(x, y)).collect();
        return Ok(Tensor { shape: out_shape, data });
    }
    if a.data.len() == 1 && out_shape == b.shape {
        let x = a.data[0];
        let data = b.data.iter().map(|&y| f(x, y)).collect();
        return Ok(Tensor { shape: out_shape, data });
    }
    if out_shape == a.shape && !b.data.is_empty() && a.shape.ends_with(&b.shape) {
        let mut data = Vec::with_capacity(a.data.len());
        for chunk in a.data.chunks_exact(b.data.len()) {
            data.extend(chunk.iter().zip(&b.data).map(|(&x, &y)| f(x, y)));
        }
        return Ok(Tensor { shape: out_shape, data });
    }
    let mut data = vec![0.0; numel(&out_shape)];
    for_each_broadcast(&out_shape, &a_strides, &b_strides, |o, ia, ib, n, sa, sb| {
        let out = &mut data[o..o + n];
        match (sa, sb) {
            (1, 1) => {
                for ((slot, &x), &y) in out.iter_mut().zip(&a.data[ia..ia + n]).zip(&b.data[ib..ib + n]) {
                    *slot = f(x, y);
                }
            }
            (1, 0) => {
                let y = b.data[ib];
                for (slot, &x) in out.iter_mut().zip(&a.data[ia..ia + n]) {
                    *slot = f(x, y);
                }
            }
            (0, 1) => {
                let x = a.data[ia];
                for (slot, &y) in out.iter_mut().zip(&b.data[ib..ib + n]) {
                    *slot = f(x, y);
                }
            }
            _ => {
                for (j, slot) in out.iter_mut().enumerate() {
                    *slot = f(a.data[ia + j * sa], b.data[ib + j * sb]);
                }
            }
        }
    });
    Ok(Tensor {
        shape: out_shape,
        data,
    })
}

/// Sums `grad` (shaped like a broadcast output) back down to `shape`.
pub(crate) fn reduce_to_shape(grad: &Tensor, shape: &[usize]) -> Tensor {
    if grad.shape == shape {
        return grad.clone();
    }
    let strides = broadcast_strides(shape, &grad.shape);
    let mut data = vec![0.0; numel(shape)];
    let zeros = vec![0; grad.shape.len()];
    for_each_broadcast(&grad.shape, &strides, &zeros, |o, ia, _, n, sa, _| {
        for j in 0..n {
            data[ia + j * sa] += grad.data[o + j];
        }
    });
    Tensor {
        shape: shape.to_vec(),
        data,
    }
}

/// Materializes `x` broadcast up to `shape`.
pub(crate) fn broadcast_to(x: &Tensor, shape: &[usize]) -> TensorResult<Tensor> {
    match broadcast_shape(&x.shape, shape) {
        Some(out) if out == shape => {}
        _ => {
            return Err(TensorError::ShapeMismatch {
                op: "broadcast_to",
                left: x.shape.clone(),
                right: shape.to_vec(),
            })
        }
    }
    let strides = broadcast_strides(&x.shape, shape);
    let zeros = vec![0; shape.len()];
    let mut data = vec![0.0; numel(shape)];
    for_each_broadcast(shape, &strides, &zeros, |o, ia, _, n, sa, _| {
        for j in 0..n {
            data[o + j] = x.data[ia + j * sa];
        }
    });
    Ok(Tensor {
        shape: shape.to_vec(),
        data,
    })
}
