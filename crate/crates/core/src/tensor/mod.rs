//! Dense tensors with tape-based reverse-mode automatic differentiation.
//!
//! Every differentiable operation records a node that references its inputs.
//! Node ids grow monotonically per thread, so sorting the nodes reachable from
//! a root by id yields the execution order (the tape). Backward walks that
//! order in reverse.
//!
//! Vector-Jacobian products are themselves written with the same tensor
//! operations. Running a backward pass with `create_graph = true` therefore
//! records a differentiable graph of the gradient, which is what exact
//! second-order meta-gradients need.
//!
//! ```
//! use metasampler::tensor::{grad, Tensor};
//!
//! let x = Tensor::<f64>::param(vec![3.0], vec![1]).unwrap();
//! let y = x.square().sum();
//! let g = grad(&y, &[x.clone()], false).unwrap();
//! assert_eq!(y.item(), 9.0);
//! assert_eq!(g[0].data(), &[6.0]);
//! ```

mod backward;
mod gradcheck;
mod io;
mod ops;

use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;

pub use backward::{backward, grad, Tape};
pub use gradcheck::grad_check;
pub use io::{decode_records, read_record, write_record, TENSOR_MAGIC};

use crate::Scalar;

/// Errors raised by tensor construction and primitive operations.
#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: index {index} out of range for length {len}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("{op}: axis {axis} invalid for shape {shape:?}")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },
    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("malformed tensor record: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Whether operations on this thread currently record graph nodes.
pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(Cell::get)
}

/// Restores the previous grad mode on drop.
pub struct GradModeGuard {
    prev: bool,
}

impl GradModeGuard {
    pub fn new(enabled: bool) -> Self {
        let prev = GRAD_ENABLED.with(|c| c.replace(enabled));
        Self { prev }
    }
}

impl Drop for GradModeGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|c| c.set(self.prev));
    }
}

/// Runs `f` without recording any graph nodes.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let _guard = GradModeGuard::new(false);
    f()
}

pub(crate) type Indices = Rc<[usize]>;

pub(crate) enum Op<T: Scalar> {
    Leaf,
    Add(Tensor<T>, Tensor<T>),
    Sub(Tensor<T>, Tensor<T>),
    Mul(Tensor<T>, Tensor<T>),
    Div(Tensor<T>, Tensor<T>),
    Neg(Tensor<T>),
    Scale(Tensor<T>, T),
    AddScalar(Tensor<T>),
    /// `.1` scaled by the single value held in `.0`.
    ScaleBy(Tensor<T>, Tensor<T>),
    Matmul(Tensor<T>, Tensor<T>),
    Transpose(Tensor<T>),
    Reshape(Tensor<T>),
    Relu(Tensor<T>),
    Clamp(Tensor<T>, T, T),
    Exp(Tensor<T>),
    Log(Tensor<T>),
    Sqrt(Tensor<T>),
    Square(Tensor<T>),
    Sin(Tensor<T>),
    Cos(Tensor<T>),
    Concat(Vec<Tensor<T>>, usize),
    Narrow {
        src: Tensor<T>,
        axis: usize,
        start: usize,
    },
    Pad {
        src: Tensor<T>,
        axis: usize,
        start: usize,
    },
    GatherRows(Tensor<T>, Indices),
    ScatterRows(Tensor<T>, Indices),
    SumAxis(Tensor<T>, usize),
    BroadcastAxis(Tensor<T>, usize),
    SelectAxis(Tensor<T>, usize, Indices),
    ScatterAxis(Tensor<T>, usize, Indices),
    Softmax(Tensor<T>),
    PairwiseSqDist(Tensor<T>, Tensor<T>),
}

impl<T: Scalar> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(..) => "neg",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::ScaleBy(..) => "scale_by",
            Op::Matmul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Reshape(..) => "reshape",
            Op::Relu(..) => "relu",
            Op::Clamp(..) => "clamp",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Sqrt(..) => "sqrt",
            Op::Square(..) => "square",
            Op::Sin(..) => "sin",
            Op::Cos(..) => "cos",
            Op::Concat(..) => "concat",
            Op::Narrow { .. } => "narrow",
            Op::Pad { .. } => "pad",
            Op::GatherRows(..) => "gather_rows",
            Op::ScatterRows(..) => "scatter_rows",
            Op::SumAxis(..) => "sum_axis",
            Op::BroadcastAxis(..) => "broadcast_axis",
            Op::SelectAxis(..) => "select_axis",
            Op::ScatterAxis(..) => "scatter_axis",
            Op::Softmax(..) => "softmax",
            Op::PairwiseSqDist(..) => "pairwise_sqdist",
        }
    }

    fn parents(&self) -> Vec<&Tensor<T>> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::ScaleBy(a, b)
            | Op::Matmul(a, b)
            | Op::PairwiseSqDist(a, b) => vec![a, b],
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Transpose(a)
            | Op::Reshape(a)
            | Op::Relu(a)
            | Op::Clamp(a, ..)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Sqrt(a)
            | Op::Square(a)
            | Op::Sin(a)
            | Op::Cos(a)
            | Op::GatherRows(a, _)
            | Op::ScatterRows(a, _)
            | Op::SumAxis(a, _)
            | Op::BroadcastAxis(a, _)
            | Op::SelectAxis(a, ..)
            | Op::ScatterAxis(a, ..)
            | Op::Softmax(a) => vec![a],
            Op::Narrow { src, .. } | Op::Pad { src, .. } => vec![src],
            Op::Concat(parts, _) => parts.iter().collect(),
        }
    }

    /// Ops whose output is finite whenever their inputs are.
    fn preserves_finiteness(&self) -> bool {
        !matches!(
            self,
            Op::Leaf | Op::Div(..) | Op::Log(..) | Op::Sqrt(..) | Op::Exp(..)
        )
    }
}

pub(crate) struct Node<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    op: Op<T>,
    grad: RefCell<Option<Vec<T>>>,
}

/// An n-dimensional row-major array that participates in differentiation.
///
/// Cloning is cheap: clones share the same graph node.
pub struct Tensor<T: Scalar>(Rc<Node<T>>);

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("op", &self.0.op.name())
            .field("requires_grad", &self.0.requires_grad)
            .field("data", &self.0.data)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    fn leaf(data: Vec<T>, shape: Vec<usize>, requires_grad: bool) -> Result<Self> {
        if numel(&shape) != data.len() || shape.contains(&0) {
            return Err(TensorError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Tensor(Rc::new(Node {
            id: next_id(),
            shape,
            data,
            requires_grad,
            op: Op::Leaf,
            grad: RefCell::new(None),
        })))
    }

    /// A constant tensor (no gradient tracked).
    pub fn new(data: Vec<T>, shape: Vec<usize>) -> Result<Self> {
        Self::leaf(data, shape, false)
    }

    /// A learnable leaf tensor whose gradient is tracked.
    pub fn param(data: Vec<T>, shape: Vec<usize>) -> Result<Self> {
        Self::leaf(data, shape, true)
    }

    pub fn scalar(value: T) -> Self {
        Self::leaf(vec![value], vec![], false).expect("scalar shape")
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::leaf(vec![value; numel(shape)], shape.to_vec(), false).expect("valid shape")
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    /// Records an operation result. Parents are dropped when no input needs
    /// a gradient or grad mode is off, so the result becomes a constant.
    pub(crate) fn from_op(data: Vec<T>, shape: Vec<usize>, op: Op<T>) -> Self {
        debug_assert_eq!(numel(&shape), data.len(), "{}", op.name());
        if cfg!(debug_assertions)
            && op.preserves_finiteness()
            && op
                .parents()
                .iter()
                .all(|p| p.data().iter().all(|v| v.is_finite()))
        {
            assert!(
                data.iter().all(|v| v.is_finite()),
                "{} produced a non-finite value from finite inputs",
                op.name()
            );
        }
        let requires_grad = is_grad_enabled() && op.parents().iter().any(|p| p.requires_grad());
        let op = if requires_grad { op } else { Op::Leaf };
        Tensor(Rc::new(Node {
            id: next_id(),
            shape,
            data,
            requires_grad,
            op,
            grad: RefCell::new(None),
        }))
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.0.op, Op::Leaf)
    }

    /// Name of the primitive that produced this tensor (`"leaf"` for inputs).
    pub fn op_name(&self) -> &'static str {
        self.0.op.name()
    }

    /// Value of a single-element tensor.
    ///
    /// Panics if the tensor holds more than one element.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    /// Accumulated gradient stored by [`backward`], if any.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        self.0.grad.borrow_mut().take();
    }

    /// A constant copy cut off from the graph.
    pub fn detach(&self) -> Self {
        Self::leaf(self.to_vec(), self.shape().to_vec(), false).expect("valid tensor")
    }

    /// A fresh leaf with the same value that tracks its own gradient.
    pub fn detach_param(&self) -> Self {
        Self::leaf(self.to_vec(), self.shape().to_vec(), true).expect("valid tensor")
    }

    pub(crate) fn op(&self) -> &Op<T> {
        &self.0.op
    }

    pub(crate) fn accumulate_grad(&self, g: &[T]) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b),
            None => *slot = Some(g.to_vec()),
        }
    }
}
