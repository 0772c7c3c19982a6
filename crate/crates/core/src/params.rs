//! Parameter containers shared by the attention, encoder and model layers.
//!
//! Every container is generic over its leaf type: `Array` for stored weights
//! and gradients, `Tensor` for a set bound into a computation graph.

use crate::rng::Rng;
use crate::tensor::{Array, Tensor};

/// Structural traversal over the leaves of a parameter container, in a fixed
/// order. Names are dotted paths such as `blocks.0.mha.q.w`.
pub trait ParamTree<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut T));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Binds stored weights as trainable graph leaves.
pub fn bind_trainable(a: &Array) -> Tensor {
    Tensor::from_array(a, true)
}

/// Binds stored weights as constants (inference).
pub fn bind_frozen(a: &Array) -> Tensor {
    Tensor::from_array(a, false)
}

/// `y = x · w + b` with `w: [in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams<T> {
    pub w: T,
    pub b: T,
}

impl LinearParams<Array> {
    /// Weights uniform in ±√(1/fan_in), zero bias.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        Self {
            w: uniform_array(&[fan_in, fan_out], (1.0 / fan_in as f64).sqrt(), rng),
            b: Array::zeros(&[fan_out]),
        }
    }
}

impl<T> LinearParams<T> {
    pub fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> LinearParams<U> {
        LinearParams {
            w: f(&self.w),
            b: f(&self.b),
        }
    }
}

impl LinearParams<Tensor> {
    pub fn forward(&self, x: &Tensor) -> crate::tensor::Result<Tensor> {
        x.linear(&self.w, &self.b)
    }
}

impl<T> ParamTree<T> for LinearParams<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        f(join(prefix, "w"), &self.w);
        f(join(prefix, "b"), &self.b);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut T)) {
        f(join(prefix, "w"), &mut self.w);
        f(join(prefix, "b"), &mut self.b);
    }
}

/// Affine pair of a layer normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams<T> {
    pub gamma: T,
    pub beta: T,
}

impl LayerNormParams<Array> {
    pub fn init(n: usize) -> Self {
        Self {
            gamma: Array::full(&[n], 1.0),
            beta: Array::zeros(&[n]),
        }
    }
}

impl<T> LayerNormParams<T> {
    pub fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> LayerNormParams<U> {
        LayerNormParams {
            gamma: f(&self.gamma),
            beta: f(&self.beta),
        }
    }
}

impl<T> ParamTree<T> for LayerNormParams<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        f(join(prefix, "gamma"), &self.gamma);
        f(join(prefix, "beta"), &self.beta);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut T)) {
        f(join(prefix, "gamma"), &mut self.gamma);
        f(join(prefix, "beta"), &mut self.beta);
    }
}

pub fn uniform_array(shape: &[usize], bound: f64, rng: &mut Rng) -> Array {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform_range(-bound, bound)).collect();
    Array::new(shape.to_vec(), data).expect("length matches shape")
}

/// Leaves of a tree in traversal order.
pub fn leaves<T, P: ParamTree<T>>(tree: &P) -> Vec<(String, &T)> {
    let mut out = Vec::new();
    tree.visit("", &mut |name, leaf| out.push((name, leaf)));
    out
}

/// Total element count of an `Array` tree.
pub fn element_count<P: ParamTree<Array>>(tree: &P) -> usize {
    let mut n = 0;
    tree.visit("", &mut |_, a| n += a.numel());
    n
}

/// Concatenates every leaf into one vector in traversal order.
pub fn flatten<P: ParamTree<Array>>(tree: &P) -> Vec<f64> {
    let mut out = Vec::new();
    tree.visit("", &mut |_, a| out.extend_from_slice(a.data()));
    out
}

/// Inverse of [`flatten`].
pub fn unflatten_into<P: ParamTree<Array>>(tree: &mut P, flat: &[f64]) {
    let mut offset = 0;
    tree.visit_mut("", &mut |_, a| {
        let n = a.numel();
        a.data_mut().copy_from_slice(&flat[offset..offset + n]);
        offset += n;
    });
    assert_eq!(offset, flat.len(), "flat vector length does not match tree");
}

/// Gradients of a bound tree, flattened in traversal order.
pub fn flat_grads<P: ParamTree<Tensor>>(tree: &P) -> Vec<f64> {
    let mut out = Vec::new();
    tree.visit("", &mut |_, t| match t.grad() {
        Some(g) => out.extend_from_slice(g.data()),
        None => out.extend(std::iter::repeat_n(0.0, t.numel())),
    });
    out
}
