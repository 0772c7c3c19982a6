//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable value plus an optional link into the graph of
//! operations that produced it. Graph nodes are reference counted and confined
//! to the thread that built them; persistent state such as model weights lives
//! in plain [`Array`]s, which are `Send + Sync` and are bound into a fresh graph
//! for every forward pass.

mod gemm;
mod ops;

use std::cell::{Cell, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ops::cross_entropy;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    Axis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("{op}: range {start}..{end} out of bounds for extent {extent}")]
    Range {
        op: &'static str,
        start: usize,
        end: usize,
        extent: usize,
    },
    #[error("{len} elements do not fill shape {shape:?}")]
    Size { shape: Vec<usize>, len: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalar(Vec<usize>),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
}

pub type Result<T> = std::result::Result<T, TensorError>;

thread_local! {
    static NAN_GUARD: Cell<bool> = const { Cell::new(false) };
}

/// Enables or disables the non-finite check on every op output of this thread.
pub fn set_nan_guard(enabled: bool) {
    NAN_GUARD.with(|g| g.set(enabled));
}

pub fn nan_guard_enabled() -> bool {
    NAN_GUARD.with(|g| g.get())
}

/// Plain row-major storage with a shape. Used for parameters, gradients and
/// anything that crosses a thread or file boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Array {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Array {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::Size {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

#[derive(Clone)]
pub struct Tensor(Rc<Node>);

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    op: Option<ops::Op>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.0.op.as_ref().map(|o| o.name()))
            .finish()
    }
}

impl Tensor {
    fn leaf(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::Size {
                shape,
                len: data.len(),
            });
        }
        Ok(Tensor(Rc::new(Node {
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            op: None,
        })))
    }

    /// Constant input; gradients are not tracked.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::leaf(shape.to_vec(), data, false)
    }

    /// Trainable leaf; gradients accumulate into it on `backward`.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::leaf(shape.to_vec(), data, true)
    }

    pub fn constant(array: &Array) -> Self {
        Tensor(Rc::new(Node {
            shape: array.shape.clone(),
            data: array.data.clone(),
            requires_grad: false,
            grad: RefCell::new(None),
            op: None,
        }))
    }

    pub fn from_array(array: &Array, requires_grad: bool) -> Self {
        Tensor(Rc::new(Node {
            shape: array.shape.clone(),
            data: array.data.clone(),
            requires_grad,
            grad: RefCell::new(None),
            op: None,
        }))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::constant(&Array::zeros(shape))
    }

    pub fn scalar(value: f64) -> Self {
        Self::constant(&Array::scalar(value))
    }

    fn from_op(name: &'static str, shape: Vec<usize>, data: Vec<f64>, op: ops::Op) -> Result<Self> {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        if nan_guard_enabled() && data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite(name));
        }
        let requires_grad = op.parents().iter().any(|p| p.requires_grad());
        Ok(Tensor(Rc::new(Node {
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            op: requires_grad.then_some(op),
        })))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(
            self.numel(),
            1,
            "item() on tensor of shape {:?}",
            self.shape()
        );
        self.0.data[0]
    }

    pub fn to_array(&self) -> Array {
        Array {
            shape: self.0.shape.clone(),
            data: self.0.data.clone(),
        }
    }

    pub fn ptr_eq(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    /// Accumulated gradient. `None` when gradients are not tracked; zeros when
    /// tracked but no backward pass has reached this tensor yet.
    pub fn grad(&self) -> Option<Array> {
        if !self.0.requires_grad {
            return None;
        }
        let data = self
            .0
            .grad
            .borrow()
            .clone()
            .unwrap_or_else(|| vec![0.0; self.numel()]);
        Some(Array {
            shape: self.0.shape.clone(),
            data,
        })
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    fn accumulate(&self, f: impl FnOnce(&mut [f64])) {
        let mut slot = self.0.grad.borrow_mut();
        let buf = slot.get_or_insert_with(|| vec![0.0; self.0.data.len()]);
        f(buf);
    }

    /// Reverse-mode sweep from a one-element loss. Leaf gradients accumulate
    /// across calls; interior gradients are recomputed each time.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalar(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topological_order();
        for t in &order {
            if t.0.op.is_some() {
                t.zero_grad();
            }
        }
        self.accumulate(|g| g[0] += 1.0);
        for t in order.iter().rev() {
            let Some(op) = &t.0.op else { continue };
            let Some(g) = t.0.grad.borrow_mut().take() else {
                continue;
            };
            op.backward(t, &g);
        }
        Ok(())
    }

    /// Post-order over nodes that require gradients; each node appears once.
    fn topological_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut seen: HashSet<*const Node> = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !seen.insert(Rc::as_ptr(&t.0)) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(op) = &t.0.op {
                for p in op.parents() {
                    if p.requires_grad() && !seen.contains(&Rc::as_ptr(&p.0)) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}

/// Splits `shape` around `axis` into (outer, extent, inner) element counts.
pub(crate) fn axis_layout(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn array_rejects_bad_length() {
        assert!(Array::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Array::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn sum_of_param_has_unit_gradient() {
        let w = Tensor::param(&[2, 3], vec![0.5; 6]).unwrap();
        let loss = w.sum().unwrap();
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn square_gradient_is_two_x() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let loss = x.mul(&x).unwrap().sum().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let loss = x.mul(&x).unwrap().sum().unwrap();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[4.0, 8.0]);
        x.zero_grad();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(x.backward(), Err(TensorError::NonScalar(_))));
    }

    #[test]
    fn constants_build_no_graph() {
        let a = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
        let b = a.add(&a).unwrap();
        assert!(!b.requires_grad());
        assert!(b.grad().is_none());
    }

    #[test]
    fn nan_guard_trips_on_non_finite() {
        let x = Tensor::new(&[1], vec![f64::MAX]).unwrap();
        set_nan_guard(true);
        let r = x.scale(10.0);
        set_nan_guard(false);
        assert_eq!(r.unwrap_err(), TensorError::NonFinite("scale"));
        assert!(x.scale(10.0).is_ok());
    }
}
