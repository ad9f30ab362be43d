//! Dense tensors with a dynamically recorded reverse-mode differentiation graph.
//!
//! A [`Tensor`] is an immutable, reference-counted buffer. Operations on
//! tensors that require gradients record their operands and a backward rule
//! in the output, so the graph is implicit in the tensors themselves.
//! [`Tensor::backward`] walks that graph in reverse topological order and
//! accumulates gradients into every participating tensor.

mod element;
mod graph;
mod ops;
mod reduce;

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

pub(crate) use element::gemm;
pub use element::{DType, Element};
pub use graph::{Graph, GraphNode};
pub use ops::{ElementwiseOp, Operand};
pub use reduce::ReduceOp;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Backward rule for one recorded operation.
pub(crate) trait Backward<T: Element>: Send + Sync {
    fn name(&self) -> &'static str;

    /// Returns one entry per input: the gradient with respect to that input,
    /// or `None` when the input does not need one.
    fn backward(&self, inputs: &[Tensor<T>], output: &[T], grad: &[T]) -> Vec<Option<Vec<T>>>;
}

struct Origin<T: Element> {
    inputs: Vec<Tensor<T>>,
    op: Box<dyn Backward<T>>,
}

struct Node<T: Element> {
    id: u64,
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<T>>>,
    origin: Option<Origin<T>>,
}

pub struct Tensor<T: Element = f32> {
    node: Arc<Node<T>>,
}

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Self {
            node: Arc::clone(&self.node),
        }
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("Tensor");
        d.field("shape", &self.node.shape)
            .field("dtype", &T::DTYPE)
            .field("requires_grad", &self.node.requires_grad);
        if self.node.data.len() <= 16 {
            d.field("data", &self.node.data);
        }
        d.finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Element> Tensor<T> {
    fn build(shape: Vec<usize>, data: Vec<T>, requires_grad: bool, origin: Option<Origin<T>>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Self {
            node: Arc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                grad: Mutex::new(None),
                origin,
            }),
        }
    }

    /// Creates a constant (non-differentiable) tensor.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::shape(format!("zero extent in shape {shape:?}")));
        }
        if numel(shape) != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {} values, got {}",
                numel(shape),
                data.len()
            )));
        }
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    /// Creates a differentiable leaf (a trainable parameter or an input to
    /// be differentiated against).
    pub fn param(shape: &[usize], data: Vec<T>) -> Result<Self> {
        Ok(Self::from_vec(shape, data)?.into_param())
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&v| T::from_f64_lossy(v)).collect())
    }

    pub fn scalar(value: T) -> Self {
        Self::build(Vec::new(), vec![value], false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::build(shape.to_vec(), vec![value; numel(shape)], false, None)
    }

    /// Turns this tensor into a differentiable leaf, copying only when the
    /// buffer is shared.
    pub fn into_param(self) -> Self {
        match Arc::try_unwrap(self.node) {
            Ok(node) => Self::build(node.shape, node.data, true, None),
            Err(shared) => Self::build(shared.shape.clone(), shared.data.clone(), true, None),
        }
    }

    /// A constant copy of this tensor cut off from the graph.
    pub fn detach(&self) -> Self {
        Self::build(self.node.shape.clone(), self.node.data.clone(), false, None)
    }

    /// Records the result of an operation. The output joins the graph only
    /// when some input requires a gradient.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<T>,
        inputs: Vec<Tensor<T>>,
        op: impl Backward<T> + 'static,
    ) -> Self {
        if inputs.iter().any(|t| t.requires_grad()) {
            Self::build(
                shape,
                data,
                true,
                Some(Origin {
                    inputs,
                    op: Box::new(op),
                }),
            )
        } else {
            Self::build(shape, data, false, None)
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

    pub fn dtype(&self) -> DType {
        T::DTYPE
    }

    pub fn data(&self) -> &[T] {
        &self.node.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.node.data.clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.node.data.iter().map(|v| v.to_f64_lossy()).collect()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::contract(format!(
                "item() needs a single element, shape is {:?}",
                self.shape()
            )));
        }
        Ok(self.node.data[0])
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    /// Whether this tensor was produced by a recorded operation.
    pub fn is_leaf(&self) -> bool {
        self.node.origin.is_none()
    }

    /// Name of the operation that produced this tensor, if recorded.
    pub fn op_name(&self) -> Option<&'static str> {
        self.node.origin.as_ref().map(|o| o.op.name())
    }

    /// Operands of the operation that produced this tensor.
    pub fn inputs(&self) -> &[Tensor<T>] {
        self.node
            .origin
            .as_ref()
            .map(|o| o.inputs.as_slice())
            .unwrap_or(&[])
    }

    /// Accumulated gradient, if any backward pass has reached this tensor.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.node.grad.lock().expect("grad lock").clone()
    }

    pub fn grad_tensor(&self) -> Option<Tensor<T>> {
        self.grad()
            .map(|g| Self::build(self.node.shape.clone(), g, false, None))
    }

    pub fn zero_grad(&self) {
        *self.node.grad.lock().expect("grad lock") = None;
    }

    fn accumulate_grad(&self, g: &[T]) {
        let mut slot = self.node.grad.lock().expect("grad lock");
        match slot.as_mut() {
            Some(existing) => {
                for (e, v) in existing.iter_mut().zip(g) {
                    *e = *e + *v;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Reverse-topological order of every gradient-carrying tensor reachable
    /// from `self`, outputs first.
    pub(crate) fn reverse_topo(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !t.requires_grad() || !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            for input in t.inputs().iter().rev() {
                if input.requires_grad() && !visited.contains(&input.id()) {
                    stack.push((input.clone(), false));
                }
            }
        }
        order.reverse();
        order
    }

    /// Populates `grad` on every gradient-carrying ancestor of this scalar.
    ///
    /// Gradients accumulate additively across calls; call
    /// [`zero_grad`](Self::zero_grad) between steps.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, shape is {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let mut pending: HashMap<u64, Vec<T>> = HashMap::new();
        pending.insert(self.id(), vec![T::one()]);
        for t in self.reverse_topo() {
            let Some(g) = pending.remove(&t.id()) else {
                continue;
            };
            if let Some(origin) = &t.node.origin {
                let grads = origin.op.backward(&origin.inputs, &t.node.data, &g);
                debug_assert_eq!(grads.len(), origin.inputs.len());
                for (input, gi) in origin.inputs.iter().zip(grads) {
                    let Some(gi) = gi else { continue };
                    if !input.requires_grad() {
                        continue;
                    }
                    debug_assert_eq!(gi.len(), input.numel(), "{}", origin.op.name());
                    match pending.get_mut(&input.id()) {
                        Some(acc) => {
                            for (a, v) in acc.iter_mut().zip(&gi) {
                                *a = *a + *v;
                            }
                        }
                        None => {
                            pending.insert(input.id(), gi);
                        }
                    }
                }
            }
            t.accumulate_grad(&g);
        }
        Ok(())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.numel() || shape.contains(&0) {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape()
            )));
        }
        Ok(Self::from_op(
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Reshape,
        ))
    }

    /// Converts to another precision as a constant (graph is not carried over).
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor::<U>::build(
            self.node.shape.clone(),
            self.node.data.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
            false,
            None,
        )
    }

    pub(crate) fn check_same_shape(&self, other: &Tensor<T>, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub(crate) fn dims4(&self, what: &str) -> Result<(usize, usize, usize, usize)> {
        match *self.shape() {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::shape(format!(
                "{what} expects an NCHW tensor, got shape {:?}",
                self.shape()
            ))),
        }
    }
}

struct Reshape;

impl<T: Element> Backward<T> for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, _inputs: &[Tensor<T>], _output: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(grad.to_vec())]
    }
}
