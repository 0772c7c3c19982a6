//! Multi-head scaled dot-product attention.
//!
//! The same parameters serve two wirings: self-attention, where queries, keys
//! and values all come from one sequence, and cross-attention, where a small
//! set of query rows (the global tokens) attends over an input sequence.
//! No masking is applied; sequences are fixed length.

use crate::params::{join, LinearParams, ParamTree};
use crate::rng::Rng;
use crate::tensor::{Array, Result, Tensor, TensorError};

/// Projections `N → heads·head_size` for queries, keys and values, and the
/// output projection `heads·head_size → N`.
#[derive(Debug, Clone, PartialEq)]
pub struct MhaParams<T> {
    pub heads: usize,
    pub head_size: usize,
    pub q: LinearParams<T>,
    pub k: LinearParams<T>,
    pub v: LinearParams<T>,
    pub o: LinearParams<T>,
}

impl MhaParams<Array> {
    pub fn init(n: usize, heads: usize, head_size: usize, rng: &mut Rng) -> Self {
        assert!(n >= 1 && heads >= 1 && head_size >= 1);
        let inner = heads * head_size;
        Self {
            heads,
            head_size,
            q: LinearParams::init(n, inner, rng),
            k: LinearParams::init(n, inner, rng),
            v: LinearParams::init(n, inner, rng),
            o: LinearParams::init(inner, n, rng),
        }
    }

    /// Closed-form parameter count: three input projections with bias plus
    /// the output projection with bias.
    pub fn count(n: usize, heads: usize, head_size: usize) -> usize {
        let inner = heads * head_size;
        3 * (n * inner + inner) + (inner * n + n)
    }
}

impl<T> MhaParams<T> {
    pub fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> MhaParams<U> {
        MhaParams {
            heads: self.heads,
            head_size: self.head_size,
            q: self.q.map(f),
            k: self.k.map(f),
            v: self.v.map(f),
            o: self.o.map(f),
        }
    }
}

impl<T> ParamTree<T> for MhaParams<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        self.q.visit(&join(prefix, "q"), f);
        self.k.visit(&join(prefix, "k"), f);
        self.v.visit(&join(prefix, "v"), f);
        self.o.visit(&join(prefix, "o"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut T)) {
        self.q.visit_mut(&join(prefix, "q"), f);
        self.k.visit_mut(&join(prefix, "k"), f);
        self.v.visit_mut(&join(prefix, "v"), f);
        self.o.visit_mut(&join(prefix, "o"), f);
    }
}

impl MhaParams<Tensor> {
    fn model_width(&self) -> usize {
        self.q.w.shape()[0]
    }

    fn check_inputs(&self, query: &Tensor, key: &Tensor, value: &Tensor) -> Result<()> {
        let mismatch = |a: &Tensor, b: &Tensor| TensorError::Shape {
            op: "multi_head_attention",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        };
        for t in [query, key, value] {
            if t.rank() != 3 || t.shape()[2] != self.model_width() {
                return Err(TensorError::Shape {
                    op: "multi_head_attention",
                    lhs: t.shape().to_vec(),
                    rhs: vec![self.model_width()],
                });
            }
        }
        if key.shape()[..2] != value.shape()[..2] {
            return Err(mismatch(key, value));
        }
        if query.shape()[0] != key.shape()[0] {
            return Err(mismatch(query, key));
        }
        Ok(())
    }

    /// `[B, L, N]` → `[B, heads, L, head_size]` (or with the last two axes
    /// swapped when `transposed`).
    fn split_heads(
        &self,
        x: &Tensor,
        proj: &LinearParams<Tensor>,
        transposed: bool,
    ) -> Result<Tensor> {
        let (b, l) = (x.shape()[0], x.shape()[1]);
        let y = proj
            .forward(x)?
            .reshape(&[b, l, self.heads, self.head_size])?;
        if transposed {
            y.permute(&[0, 2, 3, 1])
        } else {
            y.permute(&[0, 2, 1, 3])
        }
    }

    /// Row-normalized attention weights `softmax(Q Kᵀ / √d_k)`, shape
    /// `[B, heads, Lq, Lk]`.
    pub fn attention_weights(&self, query: &Tensor, key: &Tensor) -> Result<Tensor> {
        self.check_inputs(query, key, key)?;
        self.weights_unchecked(query, key)
    }

    fn weights_unchecked(&self, query: &Tensor, key: &Tensor) -> Result<Tensor> {
        let q = self.split_heads(query, &self.q, false)?;
        let kt = self.split_heads(key, &self.k, true)?;
        q.matmul(&kt)?
            .scale(1.0 / (self.head_size as f64).sqrt())?
            .softmax(3)
    }

    /// Attention of `query` rows over `key`/`value` rows. Output is
    /// `[B, Lq, N]`; dropout is applied once, to the projected output.
    pub fn forward(
        &self,
        query: &Tensor,
        key: &Tensor,
        value: &Tensor,
        dropout_p: f64,
        training: bool,
        rng: &mut Rng,
    ) -> Result<Tensor> {
        self.check_inputs(query, key, value)?;
        let (b, lq) = (query.shape()[0], query.shape()[1]);
        let weights = self.weights_unchecked(query, key)?;
        let v = self.split_heads(value, &self.v, false)?;
        let heads = weights.matmul(&v)?.permute(&[0, 2, 1, 3])?.reshape(&[
            b,
            lq,
            self.heads * self.head_size,
        ])?;
        self.o.forward(&heads)?.dropout(dropout_p, training, rng)
    }
}

pub fn multi_head_attention(
    params: &MhaParams<Tensor>,
    query: &Tensor,
    key: &Tensor,
    value: &Tensor,
    dropout_p: f64,
    training: bool,
    rng: &mut Rng,
) -> Result<Tensor> {
    params.forward(query, key, value, dropout_p, training, rng)
}

pub fn self_attention(
    params: &MhaParams<Tensor>,
    x: &Tensor,
    dropout_p: f64,
    training: bool,
    rng: &mut Rng,
) -> Result<Tensor> {
    params.forward(x, x, x, dropout_p, training, rng)
}

/// Additive sinusoidal position table `[len, n]`.
pub fn sinusoidal_encoding(len: usize, n: usize) -> Array {
    let mut data = vec![0.0; len * n];
    for pos in 0..len {
        for i in 0..n {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / n as f64);
            let angle = pos as f64 * rate;
            data[pos * n + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Array::new(vec![len, n], data).expect("length matches shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::bind_frozen;

    fn random_input(shape: &[usize], rng: &mut Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.normal()).collect()).unwrap()
    }

    fn params(n: usize, heads: usize, d: usize, seed: u64) -> MhaParams<Tensor> {
        let mut rng = Rng::new(seed);
        let mut p = MhaParams::init(n, heads, d, &mut rng);
        // non-zero biases so they participate
        for lin in [&mut p.q, &mut p.k, &mut p.v, &mut p.o] {
            for v in lin.b.data_mut() {
                *v = rng.uniform_range(-0.3, 0.3);
            }
        }
        p.map(&mut bind_frozen)
    }

    #[test]
    fn weights_rows_sum_to_one() {
        let mut rng = Rng::new(3);
        let p = params(4, 2, 3, 1);
        let q = random_input(&[2, 3, 4], &mut rng);
        let k = random_input(&[2, 5, 4], &mut rng);
        let w = p.attention_weights(&q, &k).unwrap();
        assert_eq!(w.shape(), &[2, 2, 3, 5]);
        for row in w.data().chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn output_shape_follows_query_length() {
        let mut rng = Rng::new(4);
        let p = params(4, 2, 3, 2);
        let q = random_input(&[2, 3, 4], &mut rng);
        for lk in [1, 2, 9] {
            let kv = random_input(&[2, lk, 4], &mut rng);
            let y = p.forward(&q, &kv, &kv, 0.0, false, &mut rng).unwrap();
            assert_eq!(y.shape(), &[2, 3, 4]);
        }
    }

    #[test]
    fn rejects_mismatched_batch_and_width() {
        let mut rng = Rng::new(5);
        let p = params(4, 1, 2, 3);
        let q = random_input(&[2, 3, 4], &mut rng);
        let kv = random_input(&[3, 5, 4], &mut rng);
        assert!(p.forward(&q, &kv, &kv, 0.0, false, &mut rng).is_err());
        let narrow = random_input(&[2, 5, 3], &mut rng);
        assert!(p
            .forward(&q, &narrow, &narrow, 0.0, false, &mut rng)
            .is_err());
        let k = random_input(&[2, 5, 4], &mut rng);
        let v = random_input(&[2, 6, 4], &mut rng);
        assert!(p.forward(&q, &k, &v, 0.0, false, &mut rng).is_err());
    }

    #[test]
    fn encoding_table_shape_and_first_row() {
        let pe = sinusoidal_encoding(5, 4);
        assert_eq!(pe.shape(), &[5, 4]);
        assert_eq!(&pe.data()[..4], &[0.0, 1.0, 0.0, 1.0]);
    }
}
