//! Dense row-major tensors with a reverse-mode gradient graph.
//!
//! A [`Tensor`] is an immutable handle (cheap to clone) to a node that owns
//! its data, an optional gradient buffer and, for op outputs, the record of
//! the operation that produced it. Node ids come from a global monotonically
//! increasing counter, so every op output has a larger id than each of its
//! inputs and sorting reachable nodes by id yields a topological order.
//!
//! The element type is generic over [`Real`]: `f32` is used for training and
//! `f64` exists for finite-difference gradient checks.

mod activation;
mod autograd;
mod conv;
mod linalg;
mod norm;
mod ops;
mod pool;
mod resize;

use std::fmt;
use std::iter::Sum;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Result, VigError};

pub use activation::Activation;
pub(crate) use activation::{sigmoid, softmax_rows};
pub use autograd::{OpTrace, TraceEntry};
pub use conv::Conv2dSpec;
pub use norm::{BatchNormState, Mode};

/// Floating point element type of a tensor.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Sum + Default + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    /// Dtype code used by the tensor container format.
    const DTYPE_CODE: u8;
    const NAME: &'static str;

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Real for f32 {
    const DTYPE_CODE: u8 = 1;
    const NAME: &'static str = "f32";
}

impl Real for f64 {
    const DTYPE_CODE: u8 = 2;
    const NAME: &'static str = "f64";
}

/// Gradient inputs handed to an op's backward closure.
pub(crate) struct GradCtx<'a, T: Real> {
    pub inputs: &'a [Tensor<T>],
    pub output: &'a [T],
    pub grad: &'a [T],
}

pub(crate) type BackwardFn<T> = Box<dyn Fn(&GradCtx<'_, T>) -> Vec<Option<Vec<T>>> + Send + Sync>;

struct OpRecord<T: Real> {
    kind: &'static str,
    inputs: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Node<T: Real> {
    id: u64,
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<T>>>,
    op: Option<OpRecord<T>>,
}

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Handle to an immutable tensor node.
pub struct Tensor<T: Real = f32> {
    node: Arc<Node<T>>,
}

impl<T: Real> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            node: Arc::clone(&self.node),
        }
    }
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.node.id)
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .field("op", &self.node.op.as_ref().map(|o| o.kind))
            .finish()
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Real> Tensor<T> {
    fn leaf(data: Arc<Vec<T>>, shape: Vec<usize>, requires_grad: bool) -> Self {
        Tensor {
            node: Arc::new(Node {
                id: next_id(),
                shape,
                data,
                requires_grad,
                grad: Mutex::new(None),
                op: None,
            }),
        }
    }

    /// Builds a constant tensor, checking that `data` fills `shape`.
    pub fn new(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        if shape.contains(&0) {
            return Err(VigError::dim("new", format!("zero extent in shape {shape:?}")));
        }
        if numel_of(shape) != data.len() {
            return Err(VigError::dim(
                "new",
                format!("shape {shape:?} needs {} values, got {}", numel_of(shape), data.len()),
            ));
        }
        Ok(Self::leaf(Arc::new(data), shape.to_vec(), false))
    }

    /// Builds a trainable leaf.
    pub fn param(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        Ok(Self::new(data, shape)?.requires_grad())
    }

    pub fn scalar(v: T) -> Self {
        Self::leaf(Arc::new(vec![v]), vec![1], false)
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self::leaf(Arc::new(vec![v; numel_of(shape)]), shape.to_vec(), false)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    /// Returns a fresh leaf sharing this tensor's data, marked trainable.
    pub fn requires_grad(&self) -> Self {
        Self::leaf(Arc::clone(&self.node.data), self.node.shape.clone(), true)
    }

    /// Returns a fresh constant leaf sharing this tensor's data.
    pub fn detach(&self) -> Self {
        Self::leaf(Arc::clone(&self.node.data), self.node.shape.clone(), false)
    }

    /// Converts element precision; the result is a constant leaf.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        let data = self.data().iter().map(|&v| U::lit(v.as_f64())).collect();
        Tensor::leaf(Arc::new(data), self.node.shape.clone(), false)
    }

    /// Records the output of an op. The op record is only kept when some
    /// input participates in gradient computation.
    pub(crate) fn from_op(
        kind: &'static str,
        data: Vec<T>,
        shape: Vec<usize>,
        inputs: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len(), "{kind}: shape/data mismatch");
        debug_assert!(
            !inputs.iter().all(|t| t.is_finite()) || data.iter().all(|v| v.is_finite()),
            "{kind}: non-finite output from finite inputs"
        );
        let requires_grad = inputs.iter().any(|t| t.node.requires_grad);
        let op = requires_grad.then(|| OpRecord {
            kind,
            inputs,
            backward,
        });
        Tensor {
            node: Arc::new(Node {
                id: next_id(),
                shape,
                data: Arc::new(data),
                requires_grad,
                grad: Mutex::new(None),
                op,
            }),
        }
    }

    pub fn id(&self) -> u64 {
        self.node.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn rank(&self) -> usize {
        self.node.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.node.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.node.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.node.data.as_ref().clone()
    }

    pub(crate) fn shared_data(&self) -> Arc<Vec<T>> {
        Arc::clone(&self.node.data)
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.node.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.node.data.iter().all(|v| v.is_finite())
    }

    pub fn tracks_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn op_kind(&self) -> Option<&'static str> {
        self.node.op.as_ref().map(|o| o.kind)
    }

    /// Accumulated gradient of a trainable leaf, if any backward pass reached it.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.node.grad.lock().expect("grad lock").clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.lock().expect("grad lock") = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[T]) {
        let mut slot = self.node.grad.lock().expect("grad lock");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b),
            None => *slot = Some(g.to_vec()),
        }
    }

    pub(crate) fn expect_shape(&self, op: &'static str, shape: &[usize]) -> Result<()> {
        if self.shape() != shape {
            return Err(VigError::dim(
                op,
                format!("expected shape {shape:?}, got {:?}", self.shape()),
            ));
        }
        Ok(())
    }

    pub(crate) fn expect_rank(&self, op: &'static str, rank: usize) -> Result<()> {
        if self.rank() != rank {
            return Err(VigError::dim(
                op,
                format!("expected rank {rank}, got shape {:?}", self.shape()),
            ));
        }
        Ok(())
    }
}
