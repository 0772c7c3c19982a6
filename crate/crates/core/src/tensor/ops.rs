//! Differentiable operations and their backward rules.

use super::gemm::gemm;
use super::{axis_layout, Result, Tensor, TensorError};
use crate::rng::Rng;

pub(crate) enum Op {
    /// `big + small`, `small` broadcast over the leading extents of `big`.
    Add {
        big: Tensor,
        small: Tensor,
    },
    Mul {
        big: Tensor,
        small: Tensor,
    },
    Scale {
        a: Tensor,
        c: f64,
    },
    MatMul {
        a: Tensor,
        b: Tensor,
        layout: MatLayout,
    },
    Relu {
        a: Tensor,
    },
    Softmax {
        a: Tensor,
        axis: usize,
    },
    LayerNorm {
        x: Tensor,
        gamma: Tensor,
        beta: Tensor,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Mask {
        a: Tensor,
        mask: Vec<f64>,
    },
    Mean {
        a: Tensor,
        axis: usize,
    },
    Sum {
        a: Tensor,
    },
    Concat {
        parts: Vec<Tensor>,
        axis: usize,
    },
    Slice {
        a: Tensor,
        axis: usize,
        start: usize,
    },
    Reshape {
        a: Tensor,
    },
    Permute {
        a: Tensor,
        map: Vec<usize>,
    },
    Expand {
        a: Tensor,
    },
    CrossEntropy {
        logits: Tensor,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

pub(crate) struct MatLayout {
    m: usize,
    k: usize,
    n: usize,
    /// Matrix index into `a` and `b` for every output batch position.
    pairs: Vec<(usize, usize)>,
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::MatMul { .. } => "matmul",
            Op::Relu { .. } => "relu",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Mask { .. } => "dropout",
            Op::Mean { .. } => "mean",
            Op::Sum { .. } => "sum",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Reshape { .. } => "reshape",
            Op::Permute { .. } => "permute",
            Op::Expand { .. } => "expand",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }

    pub(crate) fn parents(&self) -> Vec<&Tensor> {
        match self {
            Op::Add { big, small } | Op::Mul { big, small } => vec![big, small],
            Op::MatMul { a, b, .. } => vec![a, b],
            Op::LayerNorm { x, gamma, beta, .. } => vec![x, gamma, beta],
            Op::Concat { parts, .. } => parts.iter().collect(),
            Op::CrossEntropy { logits, .. } => vec![logits],
            Op::Scale { a, .. }
            | Op::Relu { a }
            | Op::Softmax { a, .. }
            | Op::Mask { a, .. }
            | Op::Mean { a, .. }
            | Op::Sum { a }
            | Op::Slice { a, .. }
            | Op::Reshape { a }
            | Op::Permute { a, .. }
            | Op::Expand { a } => vec![a],
        }
    }

    /// Pushes `g = ∂loss/∂out` into the parents' gradient buffers.
    pub(crate) fn backward(&self, out: &Tensor, g: &[f64]) {
        match self {
            Op::Add { big, small } => {
                if big.requires_grad() {
                    big.accumulate(|d| add_into(d, g));
                }
                if small.requires_grad() {
                    let s = small.numel();
                    small.accumulate(|d| {
                        for chunk in g.chunks_exact(s) {
                            add_into(d, chunk);
                        }
                    });
                }
            }
            Op::Mul { big, small } => {
                let s = small.numel();
                if big.requires_grad() {
                    let sv = small.data();
                    big.accumulate(|d| {
                        for (i, (di, gi)) in d.iter_mut().zip(g).enumerate() {
                            *di += gi * sv[i % s];
                        }
                    });
                }
                if small.requires_grad() {
                    let bv = big.data();
                    small.accumulate(|d| {
                        for (i, (gi, bi)) in g.iter().zip(bv).enumerate() {
                            d[i % s] += gi * bi;
                        }
                    });
                }
            }
            Op::Scale { a, c } => a.accumulate(|d| {
                for (di, gi) in d.iter_mut().zip(g) {
                    *di += c * gi;
                }
            }),
            Op::MatMul { a, b, layout } => {
                let MatLayout { m, k, n, pairs } = layout;
                let (m, k, n) = (*m, *k, *n);
                if a.requires_grad() {
                    let bv = b.data();
                    a.accumulate(|d| {
                        for (o, &(ia, ib)) in pairs.iter().enumerate() {
                            // dA += dC · Bᵀ
                            gemm(
                                m,
                                n,
                                k,
                                &g[o * m * n..],
                                false,
                                &bv[ib * k * n..],
                                true,
                                1.0,
                                &mut d[ia * m * k..],
                            );
                        }
                    });
                }
                if b.requires_grad() {
                    let av = a.data();
                    b.accumulate(|d| {
                        for (o, &(ia, ib)) in pairs.iter().enumerate() {
                            // dB += Aᵀ · dC
                            gemm(
                                k,
                                m,
                                n,
                                &av[ia * m * k..],
                                true,
                                &g[o * m * n..],
                                false,
                                1.0,
                                &mut d[ib * k * n..],
                            );
                        }
                    });
                }
            }
            Op::Relu { a } => {
                let y = out.data();
                a.accumulate(|d| {
                    for ((di, gi), yi) in d.iter_mut().zip(g).zip(y) {
                        if *yi > 0.0 {
                            *di += gi;
                        }
                    }
                });
            }
            Op::Softmax { a, axis } => {
                let (outer, dim, inner) = axis_layout(a.shape(), *axis);
                let y = out.data();
                a.accumulate(|d| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| o * dim * inner + j * inner + i;
                            let dot: f64 = (0..dim).map(|j| g[at(j)] * y[at(j)]).sum();
                            for j in 0..dim {
                                d[at(j)] += y[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let n = gamma.numel();
                if gamma.requires_grad() {
                    gamma.accumulate(|d| {
                        for (gr, xr) in g.chunks_exact(n).zip(xhat.chunks_exact(n)) {
                            for j in 0..n {
                                d[j] += gr[j] * xr[j];
                            }
                        }
                    });
                }
                if beta.requires_grad() {
                    beta.accumulate(|d| {
                        for gr in g.chunks_exact(n) {
                            add_into(d, gr);
                        }
                    });
                }
                if x.requires_grad() {
                    let gv = gamma.data();
                    x.accumulate(|d| {
                        let rows = d.chunks_exact_mut(n).zip(g.chunks_exact(n));
                        for (r, (dr, gr)) in rows.enumerate() {
                            let xr = &xhat[r * n..(r + 1) * n];
                            let mut mean_gh = 0.0;
                            let mut mean_ghx = 0.0;
                            for j in 0..n {
                                let gh = gr[j] * gv[j];
                                mean_gh += gh;
                                mean_ghx += gh * xr[j];
                            }
                            mean_gh /= n as f64;
                            mean_ghx /= n as f64;
                            for j in 0..n {
                                let gh = gr[j] * gv[j];
                                dr[j] += inv_std[r] * (gh - mean_gh - xr[j] * mean_ghx);
                            }
                        }
                    });
                }
            }
            Op::Mask { a, mask } => a.accumulate(|d| {
                for ((di, gi), mi) in d.iter_mut().zip(g).zip(mask) {
                    *di += gi * mi;
                }
            }),
            Op::Mean { a, axis } => {
                let (outer, dim, inner) = axis_layout(a.shape(), *axis);
                let scale = 1.0 / dim as f64;
                a.accumulate(|d| {
                    for o in 0..outer {
                        for j in 0..dim {
                            let base = o * dim * inner + j * inner;
                            for i in 0..inner {
                                d[base + i] += g[o * inner + i] * scale;
                            }
                        }
                    }
                });
            }
            Op::Sum { a } => a.accumulate(|d| {
                for di in d.iter_mut() {
                    *di += g[0];
                }
            }),
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = axis_layout(out.shape(), *axis);
                let mut offset = 0;
                for p in parts {
                    let width = p.shape()[*axis] * inner;
                    if p.requires_grad() {
                        p.accumulate(|d| {
                            for o in 0..outer {
                                let src = o * total * inner + offset;
                                add_into(&mut d[o * width..(o + 1) * width], &g[src..src + width]);
                            }
                        });
                    }
                    offset += width;
                }
            }
            Op::Slice { a, axis, start } => {
                let (outer, dim, inner) = axis_layout(a.shape(), *axis);
                let len = out.shape()[*axis];
                a.accumulate(|d| {
                    for o in 0..outer {
                        let dst = o * dim * inner + start * inner;
                        let src = o * len * inner;
                        add_into(&mut d[dst..dst + len * inner], &g[src..src + len * inner]);
                    }
                });
            }
            Op::Reshape { a } => a.accumulate(|d| add_into(d, g)),
            Op::Permute { a, map } => a.accumulate(|d| {
                for (gi, &src) in g.iter().zip(map) {
                    d[src] += gi;
                }
            }),
            Op::Expand { a } => {
                let s = a.numel();
                a.accumulate(|d| {
                    for chunk in g.chunks_exact(s) {
                        add_into(d, chunk);
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let c = logits.shape()[1];
                let scale = g[0] / labels.len() as f64;
                logits.accumulate(|d| {
                    for (r, &y) in labels.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == y { 1.0 } else { 0.0 };
                            d[r * c + j] += scale * (probs[r * c + j] - onehot);
                        }
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(TensorError::Axis {
            op,
            axis,
            rank: shape.len(),
        });
    }
    Ok(())
}

/// Orders two operands so the second broadcasts over the leading extents of
/// the first. Leading unit extents of the smaller shape are ignored.
fn broadcast_pair<'a>(
    op: &'static str,
    a: &'a Tensor,
    b: &'a Tensor,
) -> Result<(&'a Tensor, &'a Tensor)> {
    let (big, small) = if a.numel() >= b.numel() {
        (a, b)
    } else {
        (b, a)
    };
    let trimmed: &[usize] = {
        let s = small.shape();
        let lead = s.iter().take_while(|&&e| e == 1).count().min(s.len());
        &s[lead..]
    };
    let bs = big.shape();
    let fits = trimmed.len() <= bs.len() && bs[bs.len() - trimmed.len()..] == *trimmed;
    if !fits {
        return Err(TensorError::Shape {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok((big, small))
}

fn matmul_layout(a: &[usize], b: &[usize]) -> Result<(Vec<usize>, MatLayout)> {
    let err = || TensorError::Shape {
        op: "matmul",
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    };
    if a.len() < 2 || b.len() < 2 {
        return Err(err());
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != k2 {
        return Err(err());
    }
    let ab = &a[..a.len() - 2];
    let bb = &b[..b.len() - 2];
    let rank = ab.len().max(bb.len());
    let pad = |s: &[usize]| {
        let mut v = vec![1; rank - s.len()];
        v.extend_from_slice(s);
        v
    };
    let (pa, pb) = (pad(ab), pad(bb));
    let mut batch = Vec::with_capacity(rank);
    for (&x, &y) in pa.iter().zip(&pb) {
        batch.push(match (x, y) {
            _ if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(err()),
        });
    }
    let count: usize = batch.iter().product();
    let mut pairs = Vec::with_capacity(count);
    let mut idx = vec![0usize; rank];
    for _ in 0..count {
        let (mut ia, mut ib) = (0, 0);
        for d in 0..rank {
            ia = ia * pa[d] + if pa[d] == 1 { 0 } else { idx[d] };
            ib = ib * pb[d] + if pb[d] == 1 { 0 } else { idx[d] };
        }
        pairs.push((ia, ib));
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < batch[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    let mut shape = batch;
    shape.extend([m, n]);
    Ok((shape, MatLayout { m, k, n, pairs }))
}

impl Tensor {
    /// Elementwise sum; the smaller operand broadcasts over leading extents.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        let (big, small) = broadcast_pair("add", self, other)?;
        let s = small.numel();
        let sv = small.data();
        let data = big
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + sv[i % s])
            .collect();
        Tensor::from_op(
            "add",
            big.shape().to_vec(),
            data,
            Op::Add {
                big: big.clone(),
                small: small.clone(),
            },
        )
    }

    /// Elementwise product with the same broadcasting rule as [`Tensor::add`].
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        let (big, small) = broadcast_pair("mul", self, other)?;
        let s = small.numel();
        let sv = small.data();
        let data = big
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * sv[i % s])
            .collect();
        Tensor::from_op(
            "mul",
            big.shape().to_vec(),
            data,
            Op::Mul {
                big: big.clone(),
                small: small.clone(),
            },
        )
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        let data = self.data().iter().map(|v| v * c).collect();
        Tensor::from_op(
            "scale",
            self.shape().to_vec(),
            data,
            Op::Scale { a: self.clone(), c },
        )
    }

    /// Batched matrix product `[.., m, k] · [.., k, n]`; leading extents
    /// broadcast when equal or 1.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (shape, layout) = matmul_layout(self.shape(), other.shape())?;
        let MatLayout { m, k, n, .. } = layout;
        let mut data = vec![0.0; shape.iter().product()];
        let (av, bv) = (self.data(), other.data());
        for (o, &(ia, ib)) in layout.pairs.iter().enumerate() {
            gemm(
                m,
                k,
                n,
                &av[ia * m * k..],
                false,
                &bv[ib * k * n..],
                false,
                0.0,
                &mut data[o * m * n..],
            );
        }
        Tensor::from_op(
            "matmul",
            shape,
            data,
            Op::MatMul {
                a: self.clone(),
                b: other.clone(),
                layout,
            },
        )
    }

    /// `x · w + b` with `w: [in, out]`, `b: [out]`.
    pub fn linear(&self, w: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.matmul(w)?.add(b)
    }

    pub fn relu(&self) -> Result<Tensor> {
        let data = self.data().iter().map(|&v| v.max(0.0)).collect();
        Tensor::from_op(
            "relu",
            self.shape().to_vec(),
            data,
            Op::Relu { a: self.clone() },
        )
    }

    /// Max-shifted softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        check_axis("softmax", self.shape(), axis)?;
        let (outer, dim, inner) = axis_layout(self.shape(), axis);
        let x = self.data();
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * dim * inner + j * inner + i;
                let max = (0..dim).map(|j| x[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..dim {
                    let e = (x[at(j)] - max).exp();
                    y[at(j)] = e;
                    total += e;
                }
                for j in 0..dim {
                    y[at(j)] /= total;
                }
            }
        }
        Tensor::from_op(
            "softmax",
            self.shape().to_vec(),
            y,
            Op::Softmax {
                a: self.clone(),
                axis,
            },
        )
    }

    /// Normalizes over the last axis, then applies `gamma ⊙ x̂ + beta`.
    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        let n = *self.shape().last().ok_or(TensorError::Axis {
            op: "layer_norm",
            axis: 0,
            rank: 0,
        })?;
        if gamma.shape() != [n] || beta.shape() != [n] {
            return Err(TensorError::Shape {
                op: "layer_norm",
                lhs: self.shape().to_vec(),
                rhs: gamma.shape().to_vec(),
            });
        }
        if eps <= 0.0 {
            return Err(TensorError::Invalid {
                op: "layer_norm",
                msg: format!("eps must be positive, got {eps}"),
            });
        }
        let x = self.data();
        let rows = x.len() / n;
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; rows];
        let mut y = vec![0.0; x.len()];
        let (gv, bv) = (gamma.data(), beta.data());
        for r in 0..rows {
            let xr = &x[r * n..(r + 1) * n];
            let mean = xr.iter().sum::<f64>() / n as f64;
            let var = xr.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let s = 1.0 / (var + eps).sqrt();
            inv_std[r] = s;
            for j in 0..n {
                let h = (xr[j] - mean) * s;
                xhat[r * n + j] = h;
                y[r * n + j] = gv[j] * h + bv[j];
            }
        }
        Tensor::from_op(
            "layer_norm",
            self.shape().to_vec(),
            y,
            Op::LayerNorm {
                x: self.clone(),
                gamma: gamma.clone(),
                beta: beta.clone(),
                xhat,
                inv_std,
            },
        )
    }

    /// Inverted dropout: in training, each element survives with probability
    /// `1 - p` and is scaled by `1 / (1 - p)`. Outside training it returns
    /// `self` unchanged.
    pub fn dropout(&self, p: f64, training: bool, rng: &mut Rng) -> Result<Tensor> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::Invalid {
                op: "dropout",
                msg: format!("probability must lie in [0, 1), got {p}"),
            });
        }
        if !training || p == 0.0 {
            return Ok(self.clone());
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.numel())
            .map(|_| if rng.uniform() < p { 0.0 } else { keep })
            .collect();
        let data = self.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        Tensor::from_op(
            "dropout",
            self.shape().to_vec(),
            data,
            Op::Mask {
                a: self.clone(),
                mask,
            },
        )
    }

    /// Mean over `axis`, which is removed from the shape.
    pub fn mean(&self, axis: usize) -> Result<Tensor> {
        check_axis("mean", self.shape(), axis)?;
        let (outer, dim, inner) = axis_layout(self.shape(), axis);
        let x = self.data();
        let mut y = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..dim {
                let base = o * dim * inner + j * inner;
                add_into(&mut y[o * inner..(o + 1) * inner], &x[base..base + inner]);
            }
        }
        for v in &mut y {
            *v /= dim as f64;
        }
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        Tensor::from_op(
            "mean",
            shape,
            y,
            Op::Mean {
                a: self.clone(),
                axis,
            },
        )
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&self) -> Result<Tensor> {
        let total = self.data().iter().sum();
        Tensor::from_op("sum", vec![], vec![total], Op::Sum { a: self.clone() })
    }

    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts.first().ok_or(TensorError::Invalid {
            op: "concat",
            msg: "no tensors to concatenate".into(),
        })?;
        check_axis("concat", first.shape(), axis)?;
        let mut shape = first.shape().to_vec();
        shape[axis] = 0;
        for p in parts {
            let same = p.rank() == first.rank()
                && p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !same {
                return Err(TensorError::Shape {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
            shape[axis] += p.shape()[axis];
        }
        let (outer, _, inner) = axis_layout(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for p in parts {
                let width = p.shape()[axis] * inner;
                data.extend_from_slice(&p.data()[o * width..(o + 1) * width]);
            }
        }
        Tensor::from_op(
            "concat",
            shape,
            data,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        )
    }

    /// Rows `range` of `axis`.
    pub fn slice(&self, axis: usize, range: std::ops::Range<usize>) -> Result<Tensor> {
        check_axis("slice", self.shape(), axis)?;
        let (outer, dim, inner) = axis_layout(self.shape(), axis);
        if range.start >= range.end || range.end > dim {
            return Err(TensorError::Range {
                op: "slice",
                start: range.start,
                end: range.end,
                extent: dim,
            });
        }
        let len = range.end - range.start;
        let x = self.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * dim * inner + range.start * inner;
            data.extend_from_slice(&x[base..base + len * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Tensor::from_op(
            "slice",
            shape,
            data,
            Op::Slice {
                a: self.clone(),
                axis,
                start: range.start,
            },
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(TensorError::Shape {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Tensor::from_op(
            "reshape",
            shape.to_vec(),
            self.data().to_vec(),
            Op::Reshape { a: self.clone() },
        )
    }

    /// Reorders axes: output axis `d` is input axis `perm[d]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank
            || perm
                .iter()
                .any(|&p| p >= rank || std::mem::replace(&mut seen[p], true))
        {
            return Err(TensorError::Invalid {
                op: "permute",
                msg: format!("{perm:?} is not a permutation of {rank} axes"),
            });
        }
        let in_shape = self.shape();
        let mut in_strides = vec![1usize; rank];
        for d in (0..rank.saturating_sub(1)).rev() {
            in_strides[d] = in_strides[d + 1] * in_shape[d + 1];
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
        let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let mut map = Vec::with_capacity(self.numel());
        let mut idx = vec![0usize; rank];
        let mut offset = 0usize;
        for _ in 0..self.numel() {
            map.push(offset);
            for d in (0..rank).rev() {
                idx[d] += 1;
                offset += strides[d];
                if idx[d] < out_shape[d] {
                    break;
                }
                offset -= strides[d] * idx[d];
                idx[d] = 0;
            }
        }
        let x = self.data();
        let data = map.iter().map(|&i| x[i]).collect();
        Tensor::from_op(
            "permute",
            out_shape,
            data,
            Op::Permute {
                a: self.clone(),
                map,
            },
        )
    }

    /// Repeats a tensor with leading extent 1 `batch` times along axis 0.
    pub fn expand(&self, batch: usize) -> Result<Tensor> {
        if self.shape().first() != Some(&1) || batch == 0 {
            return Err(TensorError::Shape {
                op: "expand",
                lhs: self.shape().to_vec(),
                rhs: vec![batch],
            });
        }
        let mut shape = self.shape().to_vec();
        shape[0] = batch;
        let data = self.data().repeat(batch);
        Tensor::from_op("expand", shape, data, Op::Expand { a: self.clone() })
    }
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`, computed
/// through log-sum-exp.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != labels.len() || labels.is_empty() {
        return Err(TensorError::Shape {
            op: "cross_entropy",
            lhs: shape.to_vec(),
            rhs: vec![labels.len()],
        });
    }
    let c = shape[1];
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(TensorError::Invalid {
            op: "cross_entropy",
            msg: format!("label {bad} outside [0, {c})"),
        });
    }
    let x = logits.data();
    let mut probs = vec![0.0; x.len()];
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row = &x[r * c..(r + 1) * c];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum_exp.ln();
        total += lse - row[y];
        for j in 0..c {
            probs[r * c + j] = (row[j] - lse).exp();
        }
    }
    Tensor::from_op(
        "cross_entropy",
        vec![],
        vec![total / labels.len() as f64],
        Op::CrossEntropy {
            logits: logits.clone(),
            labels: labels.to_vec(),
            probs,
        },
    )
}
