//! Pre-norm transformer encoder block:
//!
//! ```text
//! X' = X  + Dropout(MHSA(LN₁(X)))
//! Y  = X' + FFN(LN₂(X')),   FFN = linear → ReLU → dropout → linear
//! ```
//!
//! When a block carries no layer-norm parameters the normalizations are the
//! identity map, which is how the "no layer normalization" ablation is built.

use crate::attention::MhaParams;
use crate::params::{join, LayerNormParams, LinearParams, ParamTree};
use crate::rng::Rng;
use crate::tensor::{Array, Result, Tensor, TensorError};

pub const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderBlockParams<T> {
    pub norm1: Option<LayerNormParams<T>>,
    pub mha: MhaParams<T>,
    pub norm2: Option<LayerNormParams<T>>,
    pub ffn1: LinearParams<T>,
    pub ffn2: LinearParams<T>,
    pub dropout: f64,
}

impl EncoderBlockParams<Array> {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        n: usize,
        heads: usize,
        head_size: usize,
        ff_dim: usize,
        dropout: f64,
        layer_norm: bool,
        rng: &mut Rng,
    ) -> Self {
        assert!(ff_dim >= 1);
        Self {
            norm1: layer_norm.then(|| LayerNormParams::init(n)),
            mha: MhaParams::init(n, heads, head_size, rng),
            norm2: layer_norm.then(|| LayerNormParams::init(n)),
            ffn1: LinearParams::init(n, ff_dim, rng),
            ffn2: LinearParams::init(ff_dim, n, rng),
            dropout,
        }
    }

    pub fn count(
        n: usize,
        heads: usize,
        head_size: usize,
        ff_dim: usize,
        layer_norm: bool,
    ) -> usize {
        let norms = if layer_norm { 4 * n } else { 0 };
        norms + MhaParams::count(n, heads, head_size) + (n * ff_dim + ff_dim) + (ff_dim * n + n)
    }
}

impl<T> EncoderBlockParams<T> {
    pub fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> EncoderBlockParams<U> {
        EncoderBlockParams {
            norm1: self.norm1.as_ref().map(|p| p.map(f)),
            mha: self.mha.map(f),
            norm2: self.norm2.as_ref().map(|p| p.map(f)),
            ffn1: self.ffn1.map(f),
            ffn2: self.ffn2.map(f),
            dropout: self.dropout,
        }
    }
}

impl<T> ParamTree<T> for EncoderBlockParams<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        if let Some(n) = &self.norm1 {
            n.visit(&join(prefix, "norm1"), f);
        }
        self.mha.visit(&join(prefix, "mha"), f);
        if let Some(n) = &self.norm2 {
            n.visit(&join(prefix, "norm2"), f);
        }
        self.ffn1.visit(&join(prefix, "ffn1"), f);
        self.ffn2.visit(&join(prefix, "ffn2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut T)) {
        if let Some(n) = &mut self.norm1 {
            n.visit_mut(&join(prefix, "norm1"), f);
        }
        self.mha.visit_mut(&join(prefix, "mha"), f);
        if let Some(n) = &mut self.norm2 {
            n.visit_mut(&join(prefix, "norm2"), f);
        }
        self.ffn1.visit_mut(&join(prefix, "ffn1"), f);
        self.ffn2.visit_mut(&join(prefix, "ffn2"), f);
    }
}

fn normalize(x: &Tensor, norm: Option<&LayerNormParams<Tensor>>) -> Result<Tensor> {
    match norm {
        Some(p) => x.layer_norm(&p.gamma, &p.beta, LAYER_NORM_EPS),
        None => Ok(x.clone()),
    }
}

/// One encoder block over `x: [B, S, N]`; the output has the same shape.
pub fn encoder_block_forward(
    params: &EncoderBlockParams<Tensor>,
    x: &Tensor,
    training: bool,
    rng: &mut Rng,
) -> Result<Tensor> {
    let n = params.ffn1.w.shape()[0];
    if x.rank() != 3 || x.shape()[2] != n {
        return Err(TensorError::Shape {
            op: "encoder_block",
            lhs: x.shape().to_vec(),
            rhs: vec![n],
        });
    }
    let p = params.dropout;
    let x_norm = normalize(x, params.norm1.as_ref())?;
    let attn = params
        .mha
        .forward(&x_norm, &x_norm, &x_norm, p, training, rng)?;
    let x1 = x.add(&attn)?;
    let h = normalize(&x1, params.norm2.as_ref())?;
    let ff = params.ffn1.forward(&h)?.relu()?.dropout(p, training, rng)?;
    let ff = params.ffn2.forward(&ff)?;
    x1.add(&ff)
}

/// Blocks applied in order, each output feeding the next.
pub fn encoder_stack_forward(
    blocks: &[EncoderBlockParams<Tensor>],
    x: &Tensor,
    training: bool,
    rng: &mut Rng,
) -> Result<Tensor> {
    if blocks.is_empty() {
        return Err(TensorError::Invalid {
            op: "encoder_stack",
            msg: "an encoder stack needs at least one block".into(),
        });
    }
    let mut h = x.clone();
    for (i, block) in blocks.iter().enumerate() {
        let mut block_rng = rng.split(i as u64);
        h = encoder_block_forward(block, &h, training, &mut block_rng)?;
    }
    Ok(h)
}
