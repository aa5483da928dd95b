//! Dense `f64` tensors with tape-free reverse-mode differentiation.
//!
//! Every tensor produced by an operation on a gradient-tracking input keeps a
//! reference to its inputs. Node ids are handed out in creation order, so
//! sorting reachable nodes by descending id yields a valid reverse
//! topological order for [`Tensor::backward`].
//!
//! ```
//! use hydrodcm::tensor::Tensor;
//!
//! let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
//! let loss = x.square().sum();
//! loss.backward().unwrap();
//! assert_eq!(x.grad().unwrap(), vec![2.0, 4.0]);
//! ```

mod ops;
pub mod optim;
pub mod rng;

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use thiserror::Error;

pub use ops::cosine_similarity;
pub(crate) use ops::Op;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: input outside the operation's domain ({detail})")]
    Domain { op: &'static str, detail: String },
    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
}

pub type Result<T> = std::result::Result<T, TensorError>;

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
    static READ_TRACE: RefCell<Option<HashSet<u64>>> = const { RefCell::new(None) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

fn grad_enabled() -> bool {
    GRAD_ENABLED.with(Cell::get)
}

/// Runs `f` without recording any graph nodes.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|c| c.replace(false));
    let out = f();
    GRAD_ENABLED.with(|c| c.set(prev));
    out
}

/// Runs `f` and returns the ids of every tensor read as an operation input.
pub fn trace_reads<R>(f: impl FnOnce() -> R) -> (R, HashSet<u64>) {
    let prev = READ_TRACE.with(|t| t.replace(Some(HashSet::new())));
    let out = f();
    let seen = READ_TRACE.with(|t| t.replace(prev)).unwrap_or_default();
    (out, seen)
}

fn record_read(id: u64) {
    READ_TRACE.with(|t| {
        if let Some(set) = t.borrow_mut().as_mut() {
            set.insert(id);
        }
    });
}

pub(crate) struct Node {
    id: u64,
    shape: Vec<usize>,
    value: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    op: Option<Op>,
}

#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("values", &*self.0.value.borrow())
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn leaf(shape: &[usize], values: Vec<f64>, requires_grad: bool) -> Result<Tensor> {
        if numel(shape) != values.len() {
            return Err(TensorError::Dimension {
                op: "new",
                lhs: shape.to_vec(),
                rhs: vec![values.len()],
            });
        }
        Ok(Tensor(Rc::new(Node {
            id: next_id(),
            shape: shape.to_vec(),
            value: RefCell::new(values),
            grad: RefCell::new(None),
            requires_grad,
            op: None,
        })))
    }

    /// A constant tensor; never accumulates gradient.
    pub fn new(shape: &[usize], values: Vec<f64>) -> Result<Tensor> {
        Self::leaf(shape, values, false)
    }

    /// A trainable leaf tensor.
    pub fn param(shape: &[usize], values: Vec<f64>) -> Result<Tensor> {
        Self::leaf(shape, values, true)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        Self::leaf(shape, vec![value; numel(shape)], false).expect("shape matches by construction")
    }

    pub fn scalar(value: f64) -> Tensor {
        Self::leaf(&[], vec![value], false).expect("scalar shape")
    }

    /// Result of an operation. Records `op` only when gradients are enabled
    /// and some input tracks gradients.
    pub(crate) fn from_op(shape: Vec<usize>, values: Vec<f64>, op: Op) -> Tensor {
        debug_assert_eq!(numel(&shape), values.len());
        let mut requires_grad = false;
        for input in op.inputs() {
            record_read(input.id());
            requires_grad |= input.requires_grad();
        }
        let requires_grad = requires_grad && grad_enabled();
        Tensor(Rc::new(Node {
            id: next_id(),
            shape,
            value: RefCell::new(values),
            grad: RefCell::new(None),
            requires_grad,
            op: if requires_grad { Some(op) } else { None },
        }))
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        numel(&self.0.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.op.is_none()
    }

    pub fn value(&self) -> Ref<'_, Vec<f64>> {
        self.0.value.borrow()
    }

    /// Mutable access to the stored values. Intended for optimizers and
    /// checkpoint loading; mutating a tensor that is an input of a live graph
    /// invalidates that graph's saved values.
    pub fn value_mut(&self) -> RefMut<'_, Vec<f64>> {
        self.0.value.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.value.borrow().clone()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        let v = self.0.value.borrow();
        assert_eq!(v.len(), 1, "item() on tensor of shape {:?}", self.0.shape);
        v[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn grad_mut(&self) -> RefMut<'_, Option<Vec<f64>>> {
        self.0.grad.borrow_mut()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// A constant copy of the current values, cut off from the graph.
    pub fn detach(&self) -> Tensor {
        Self::leaf(&self.0.shape, self.to_vec(), false).expect("same shape")
    }

    pub(crate) fn op(&self) -> Option<&Op> {
        self.0.op.as_ref()
    }

    /// Reverse-mode sweep from a scalar root, seeding its gradient with 1.
    ///
    /// Leaf gradients accumulate across calls until [`Tensor::zero_grad`].
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarRoot(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Err(TensorError::Invalid {
                op: "backward",
                msg: "root is not attached to a differentiation graph".into(),
            });
        }

        let mut order = Vec::new();
        let mut seen = HashSet::new();
        let mut stack = vec![self.clone()];
        seen.insert(self.id());
        while let Some(t) = stack.pop() {
            if let Some(op) = t.op() {
                for input in op.inputs() {
                    if input.requires_grad() && seen.insert(input.id()) {
                        stack.push(input.clone());
                    }
                }
            }
            order.push(t);
        }
        order.sort_unstable_by(|a, b| b.id().cmp(&a.id()));

        let mut grads: HashMap<u64, Vec<f64>> = HashMap::new();
        grads.insert(self.id(), vec![1.0]);
        for node in &order {
            let Some(g) = grads.remove(&node.id()) else {
                continue;
            };
            match node.op() {
                None => {
                    let mut slot = node.0.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => *slot = Some(g),
                    }
                }
                Some(op) => op.backward(&node.value(), &g, &mut GradSink(&mut grads)),
            }
        }
        Ok(())
    }
}

/// Gradient accumulator handed to each operation's backward rule.
pub(crate) struct GradSink<'a>(&'a mut HashMap<u64, Vec<f64>>);

impl GradSink<'_> {
    /// Accumulates into `t`'s gradient buffer; skipped for constants.
    pub(crate) fn add(&mut self, t: &Tensor, f: impl FnOnce(&mut [f64])) {
        if !t.requires_grad() {
            return;
        }
        let buf = self.0.entry(t.id()).or_insert_with(|| vec![0.0; t.numel()]);
        f(buf);
    }
}

#[cfg(test)]
mod tests;
