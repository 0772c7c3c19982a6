//! The GCTAF classifier.
//!
//! ```text
//! x [B,τ,N] ─┬───────────────────────────────┐
//!            │  tokens [1,G,N] → expand [B,G,N]
//!            └─► cross-attention (Q = tokens, K = V = x) → [B,G,N]
//!  concat along time → [B,τ+G,N] → L encoder blocks → split at τ
//!  local [B,τ,N] → mean over time → [B,N] ┐
//!  global [B,G,N] → mean over tokens → [B,N] ┴► concat [B,2N] → MLP → logits [B,C]
//! ```
//!
//! Ablated variants reuse the same parameters minus the disabled component;
//! see [`Ablation`].

mod checkpoint;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::{sinusoidal_encoding, MhaParams};
use crate::encoder::{encoder_stack_forward, EncoderBlockParams};
use crate::params::{join, uniform_array, LinearParams, ParamTree};
use crate::rng::Rng;
use crate::tensor::{Array, Tensor, TensorError};

pub use checkpoint::{Checkpoint, CheckpointError, MAGIC};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Which architectural component is disabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    None,
    /// No learnable tokens at all; the encoder runs on the input alone.
    NoGlobalTokens,
    /// Tokens are concatenated raw, without attending to the input.
    NoCrossAttention,
    /// Both layer normalizations of every block become the identity.
    NoLayerNorm,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::None,
        Ablation::NoGlobalTokens,
        Ablation::NoCrossAttention,
        Ablation::NoLayerNorm,
    ];

    /// Human-readable variant label used in ablation tables.
    pub fn label(self) -> &'static str {
        match self {
            Ablation::None => "GCTAF",
            Ablation::NoGlobalTokens => "no global tokens",
            Ablation::NoCrossAttention => "no cross-attention",
            Ablation::NoLayerNorm => "no layer normalization",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub tau: usize,
    pub n_features: usize,
    pub num_classes: usize,
    pub global_tokens: usize,
    pub num_blocks: usize,
    pub heads: usize,
    pub head_size: usize,
    pub ff_dim: usize,
    pub mlp_units: Vec<usize>,
    pub dropout: f64,
    pub ablation: Ablation,
    pub positional_encoding: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            tau: 60,
            n_features: 24,
            num_classes: 2,
            global_tokens: 4,
            num_blocks: 1,
            heads: 4,
            head_size: 256,
            ff_dim: 4,
            mlp_units: vec![128, 64],
            dropout: 0.1,
            ablation: Ablation::None,
            positional_encoding: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(ModelError::Config(msg));
        if self.tau == 0 || self.n_features == 0 {
            return fail(format!(
                "tau ({}) and n_features ({}) must be positive",
                self.tau, self.n_features
            ));
        }
        if self.num_classes < 2 {
            return fail(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            ));
        }
        if self.ablation != Ablation::NoGlobalTokens && self.global_tokens == 0 {
            return fail("global_tokens must be at least 1".into());
        }
        if self.num_blocks == 0 {
            return fail("num_blocks must be at least 1".into());
        }
        if self.heads == 0 || self.head_size == 0 || self.ff_dim == 0 {
            return fail("heads, head_size and ff_dim must be positive".into());
        }
        if self.mlp_units.is_empty() || self.mlp_units.contains(&0) {
            return fail(format!(
                "mlp_units must be non-empty and positive, got {:?}",
                self.mlp_units
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    /// Number of token rows actually used (0 for the no-global-tokens variant).
    pub fn effective_global_tokens(&self) -> usize {
        match self.ablation {
            Ablation::NoGlobalTokens => 0,
            _ => self.global_tokens,
        }
    }

    fn layer_norm(&self) -> bool {
        self.ablation != Ablation::NoLayerNorm
    }

    /// Closed-form parameter count:
    ///
    /// ```text
    ///   G·N                                   global tokens (unless no_global_tokens)
    /// + 3(N·hd + hd) + (hd·N + N)             cross-attention (full model only), hd = heads·head_size
    /// + L · [4N + mha + (N·F + F) + (F·N + N)] encoder blocks (4N only with layer norm)
    /// + Σ (w_{i-1}·w_i + w_i), w_0 = 2N       MLP head
    /// + w_last·C + C                          output layer
    /// ```
    pub fn parameter_count(&self) -> usize {
        let n = self.n_features;
        let tokens = self.effective_global_tokens() * n;
        let cross = if self.ablation == Ablation::None {
            MhaParams::<Array>::count(n, self.heads, self.head_size)
        } else {
            0
        };
        let blocks = self.num_blocks
            * EncoderBlockParams::<Array>::count(
                n,
                self.heads,
                self.head_size,
                self.ff_dim,
                self.layer_norm(),
            );
        let mut mlp = 0;
        let mut width = 2 * n;
        for &u in &self.mlp_units {
            mlp += width * u + u;
            width = u;
        }
        let output = width * self.num_classes + self.num_classes;
        tokens + cross + blocks + mlp + output
    }
}

/// All learnable state of a classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct GctafParams<T> {
    /// `[1, G, N]`, shared across the batch.
    pub global_tokens: Option<T>,
    pub cross_attn: Option<MhaParams<T>>,
    pub blocks: Vec<EncoderBlockParams<T>>,
    pub mlp: Vec<LinearParams<T>>,
    pub output: LinearParams<T>,
}

impl<T> GctafParams<T> {
    pub fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> GctafParams<U> {
        GctafParams {
            global_tokens: self.global_tokens.as_ref().map(&mut *f),
            cross_attn: self.cross_attn.as_ref().map(|p| p.map(f)),
            blocks: self.blocks.iter().map(|b| b.map(f)).collect(),
            mlp: self.mlp.iter().map(|l| l.map(f)).collect(),
            output: self.output.map(f),
        }
    }
}

impl<T> ParamTree<T> for GctafParams<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        if let Some(t) = &self.global_tokens {
            f(join(prefix, "global_tokens"), t);
        }
        if let Some(c) = &self.cross_attn {
            c.visit(&join(prefix, "cross_attn"), f);
        }
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("blocks.{i}")), f);
        }
        for (i, l) in self.mlp.iter().enumerate() {
            l.visit(&join(prefix, &format!("mlp.{i}")), f);
        }
        self.output.visit(&join(prefix, "output"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut T)) {
        if let Some(t) = &mut self.global_tokens {
            f(join(prefix, "global_tokens"), t);
        }
        if let Some(c) = &mut self.cross_attn {
            c.visit_mut(&join(prefix, "cross_attn"), f);
        }
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("blocks.{i}")), f);
        }
        for (i, l) in self.mlp.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("mlp.{i}")), f);
        }
        self.output.visit_mut(&join(prefix, "output"), f);
    }
}

/// Fresh parameters: weights (and global tokens) uniform in ±√(1/fan_in),
/// biases zero, layer-norm affine at identity. Each component draws from
/// its own split stream.
pub fn init_params(cfg: &ModelConfig, rng: &Rng) -> Result<GctafParams<Array>> {
    cfg.validate()?;
    let n = cfg.n_features;
    let g = cfg.effective_global_tokens();
    let global_tokens =
        (g > 0).then(|| uniform_array(&[1, g, n], (1.0 / n as f64).sqrt(), &mut rng.split(1)));
    let cross_attn = (cfg.ablation == Ablation::None)
        .then(|| MhaParams::init(n, cfg.heads, cfg.head_size, &mut rng.split(2)));
    let blocks = (0..cfg.num_blocks)
        .map(|i| {
            EncoderBlockParams::init(
                n,
                cfg.heads,
                cfg.head_size,
                cfg.ff_dim,
                cfg.dropout,
                cfg.layer_norm(),
                &mut rng.split(100 + i as u64),
            )
        })
        .collect();
    let mut mlp_rng = rng.split(3);
    let mut width = 2 * n;
    let mut mlp = Vec::with_capacity(cfg.mlp_units.len());
    for &u in &cfg.mlp_units {
        mlp.push(LinearParams::init(width, u, &mut mlp_rng));
        width = u;
    }
    let output = LinearParams::init(width, cfg.num_classes, &mut rng.split(4));
    Ok(GctafParams {
        global_tokens,
        cross_attn,
        blocks,
        mlp,
        output,
    })
}

pub fn parameter_count(cfg: &ModelConfig) -> usize {
    cfg.parameter_count()
}

/// Shapes observed at each stage of one forward pass.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ShapeTrace {
    pub input: Vec<usize>,
    /// Token rows entering the encoder (after cross-attention when enabled).
    pub tokens: Option<Vec<usize>>,
    pub sequence: Vec<usize>,
    pub encoded: Vec<usize>,
    pub local: Vec<usize>,
    pub global: Option<Vec<usize>>,
    pub v_local: Vec<usize>,
    pub v_global: Vec<usize>,
    pub fused: Vec<usize>,
    pub logits: Vec<usize>,
}

/// Checks that `params` has exactly the components `cfg` calls for.
pub fn check_params<T>(params: &GctafParams<T>, cfg: &ModelConfig) -> Result<()> {
    let want_tokens = cfg.ablation != Ablation::NoGlobalTokens;
    let want_cross = cfg.ablation == Ablation::None;
    let want_norm = cfg.ablation != Ablation::NoLayerNorm;
    let fail = |what: &str| {
        Err(ModelError::Config(format!(
            "{what} inconsistent with ablation {:?}",
            cfg.ablation
        )))
    };
    if params.global_tokens.is_some() != want_tokens {
        return fail("global tokens");
    }
    if params.cross_attn.is_some() != want_cross {
        return fail("cross-attention parameters");
    }
    if params.blocks.len() != cfg.num_blocks {
        return Err(ModelError::Config(format!(
            "{} encoder blocks, config asks for {}",
            params.blocks.len(),
            cfg.num_blocks
        )));
    }
    if params
        .blocks
        .iter()
        .any(|b| b.norm1.is_some() != want_norm || b.norm2.is_some() != want_norm)
    {
        return fail("layer-norm parameters");
    }
    if params.mlp.len() != cfg.mlp_units.len() {
        return Err(ModelError::Config(
            "MLP depth differs from mlp_units".into(),
        ));
    }
    Ok(())
}

/// Logits `[B, C]` for `x: [B, τ, N]`.
pub fn forward(
    params: &GctafParams<Tensor>,
    cfg: &ModelConfig,
    x: &Tensor,
    training: bool,
    rng: &mut Rng,
) -> Result<Tensor> {
    run(params, cfg, x, training, rng, None)
}

/// Forward pass that also records the shape of every stage.
pub fn forward_traced(
    params: &GctafParams<Tensor>,
    cfg: &ModelConfig,
    x: &Tensor,
    training: bool,
    rng: &mut Rng,
) -> Result<(Tensor, ShapeTrace)> {
    let mut trace = ShapeTrace::default();
    let logits = run(params, cfg, x, training, rng, Some(&mut trace))?;
    Ok((logits, trace))
}

/// Forward pass of an ablated variant; `cfg.ablation` must not be `None`.
pub fn forward_ablated(
    params: &GctafParams<Tensor>,
    cfg: &ModelConfig,
    x: &Tensor,
    training: bool,
    rng: &mut Rng,
) -> Result<Tensor> {
    if cfg.ablation == Ablation::None {
        return Err(ModelError::Config(
            "forward_ablated called without an ablation".into(),
        ));
    }
    forward(params, cfg, x, training, rng)
}

/// Token rows fed to the encoder alongside the input, `[B, G, N]`.
fn token_rows(
    params: &GctafParams<Tensor>,
    cfg: &ModelConfig,
    x: &Tensor,
    rng: &mut Rng,
    training: bool,
) -> Result<Option<Tensor>> {
    let Some(tokens) = &params.global_tokens else {
        return Ok(None);
    };
    let expected = [1, cfg.global_tokens, cfg.n_features];
    if tokens.shape() != expected {
        return Err(TensorError::Shape {
            op: "global_tokens",
            lhs: tokens.shape().to_vec(),
            rhs: expected.to_vec(),
        }
        .into());
    }
    let expanded = tokens.expand(x.shape()[0])?;
    match &params.cross_attn {
        // Cross-attention itself carries no dropout; only the encoder's
        // attention outputs are dropped.
        Some(cross) => Ok(Some(cross.forward(&expanded, x, x, 0.0, training, rng)?)),
        None => Ok(Some(expanded)),
    }
}

fn run(
    params: &GctafParams<Tensor>,
    cfg: &ModelConfig,
    x: &Tensor,
    training: bool,
    rng: &mut Rng,
    trace: Option<&mut ShapeTrace>,
) -> Result<Tensor> {
    cfg.validate()?;
    check_params(params, cfg)?;
    let (tau, n) = (cfg.tau, cfg.n_features);
    if x.rank() != 3 || x.shape()[1] != tau || x.shape()[2] != n {
        return Err(TensorError::Shape {
            op: "gctaf_forward",
            lhs: x.shape().to_vec(),
            rhs: vec![tau, n],
        }
        .into());
    }
    let x = if cfg.positional_encoding {
        x.add(&Tensor::constant(&sinusoidal_encoding(tau, n)))?
    } else {
        x.clone()
    };
    let tokens = token_rows(params, cfg, &x, &mut rng.split(1), training)?;
    let sequence = match &tokens {
        Some(t) => Tensor::concat(&[x.clone(), t.clone()], 1)?,
        None => x.clone(),
    };
    let encoded = encoder_stack_forward(&params.blocks, &sequence, training, &mut rng.split(2))?;
    let local = encoded.slice(1, 0..tau)?;
    let v_local = local.mean(1)?;
    let global = match &tokens {
        Some(t) => Some(encoded.slice(1, tau..tau + t.shape()[1])?),
        None => None,
    };
    let v_global = match &global {
        Some(g) => g.mean(1)?,
        // keeps the head's input width at 2N
        None => v_local.clone(),
    };
    let fused = Tensor::concat(&[v_local.clone(), v_global.clone()], 1)?;
    let logits = mlp_head(
        &params.mlp,
        &params.output,
        &fused,
        cfg.dropout,
        training,
        &mut rng.split(3),
    )?;
    if let Some(tr) = trace {
        *tr = ShapeTrace {
            input: x.shape().to_vec(),
            tokens: tokens.as_ref().map(|t| t.shape().to_vec()),
            sequence: sequence.shape().to_vec(),
            encoded: encoded.shape().to_vec(),
            local: local.shape().to_vec(),
            global: global.as_ref().map(|g| g.shape().to_vec()),
            v_local: v_local.shape().to_vec(),
            v_global: v_global.shape().to_vec(),
            fused: fused.shape().to_vec(),
            logits: logits.shape().to_vec(),
        };
    }
    Ok(logits)
}

/// One (linear → ReLU → dropout) group per hidden width, then the output
/// projection to class logits.
fn mlp_head(
    mlp: &[LinearParams<Tensor>],
    output: &LinearParams<Tensor>,
    v: &Tensor,
    dropout: f64,
    training: bool,
    rng: &mut Rng,
) -> Result<Tensor> {
    let mut h = v.clone();
    for layer in mlp {
        h = layer.forward(&h)?.relu()?.dropout(dropout, training, rng)?;
    }
    Ok(output.forward(&h)?)
}

/// Plain transformer classifier: encoder stack over the raw input, mean over
/// time, and the same head as GCTAF fed with the pooled vector twice.
pub fn transformer_baseline_forward(
    blocks: &[EncoderBlockParams<Tensor>],
    mlp: &[LinearParams<Tensor>],
    output: &LinearParams<Tensor>,
    x: &Tensor,
    dropout: f64,
    training: bool,
    rng: &mut Rng,
) -> Result<Tensor> {
    let encoded = encoder_stack_forward(blocks, x, training, &mut rng.split(2))?;
    let pooled = encoded.mean(1)?;
    let fused = Tensor::concat(&[pooled.clone(), pooled], 1)?;
    mlp_head(mlp, output, &fused, dropout, training, &mut rng.split(3))
}

/// Predicted class per row, argmax over logits; ties resolve to the lower
/// class index (class 0 is NF).
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let c = logits.shape()[logits.rank() - 1];
    logits
        .data()
        .chunks_exact(c)
        .map(|row| {
            let mut best = 0;
            for j in 1..c {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
