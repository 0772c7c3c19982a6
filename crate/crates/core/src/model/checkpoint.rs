//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian `u64`):
//!
//! ```text
//! "GCTAF1"
//! meta_len, meta bytes        ModelConfig as JSON
//! repeated until end of file:
//!   name_len, name bytes (UTF-8)
//!   rank, extents[rank]
//!   values: product(extents) × f64 (LE)
//! ```
//!
//! Parameter tensors use their dotted tree names. Any other tensor (for
//! example the normalization statistics under `preprocess.*`) is kept as an
//! extra and returned alongside the parameters.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

use super::{check_params, init_params, GctafParams, ModelConfig};
use crate::params::ParamTree;
use crate::rng::Rng;
use crate::tensor::Array;

pub const MAGIC: &[u8; 6] = b"GCTAF1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] super::ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: GctafParams<Array>,
    /// Non-parameter tensors, by name.
    pub extra: BTreeMap<String, Array>,
}

impl Checkpoint {
    pub fn new(config: ModelConfig, params: GctafParams<Array>) -> Self {
        Self {
            config,
            params,
            extra: BTreeMap::new(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let meta = serde_json::to_vec(&self.config).expect("config serializes");
        put_u64(&mut out, meta.len() as u64);
        out.extend_from_slice(&meta);
        self.params
            .visit("", &mut |name, a| put_tensor(&mut out, &name, a));
        for (name, a) in &self.extra {
            put_tensor(&mut out, name, a);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(r.error_at(0, "missing GCTAF1 magic"));
        }
        let meta_len = r.len_field()?;
        let meta_at = r.pos;
        let config: ModelConfig = serde_json::from_slice(r.take(meta_len)?)
            .map_err(|e| r.error_at(meta_at, &format!("bad config metadata: {e}")))?;
        config
            .validate()
            .map_err(|e| r.error_at(meta_at, &e.to_string()))?;

        let mut tensors: BTreeMap<String, (usize, Array)> = BTreeMap::new();
        while r.pos < bytes.len() {
            let at = r.pos;
            let name_len = r.len_field()?;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| r.error_at(at, "tensor name is not UTF-8"))?
                .to_string();
            let rank = r.len_field()?;
            let mut shape = Vec::with_capacity(rank.min(16));
            for _ in 0..rank {
                shape.push(r.len_field()?);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &e| acc.checked_mul(e))
                .ok_or_else(|| r.error_at(at, "tensor extents overflow"))?;
            let raw = r.take(
                numel
                    .checked_mul(8)
                    .ok_or_else(|| r.error_at(at, "tensor too large"))?,
            )?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let array = Array::new(shape, data).expect("numel matches shape");
            if tensors.insert(name.clone(), (at, array)).is_some() {
                return Err(r.error_at(at, &format!("duplicate tensor {name}")));
            }
        }

        let mut params = init_params(&config, &Rng::new(0))?;
        let mut missing = None;
        let mut mismatch = None;
        params.visit_mut("", &mut |name, slot| match tensors.remove(&name) {
            Some((_, a)) if a.shape() == slot.shape() => *slot = a,
            Some((at, a)) => {
                mismatch.get_or_insert((at, name, a.shape().to_vec(), slot.shape().to_vec()));
            }
            None => {
                missing.get_or_insert(name);
            }
        });
        if let Some((at, name, got, want)) = mismatch {
            return Err(r.error_at(
                at,
                &format!("tensor {name} has shape {got:?}, expected {want:?}"),
            ));
        }
        if let Some(name) = missing {
            return Err(r.error_at(bytes.len(), &format!("missing parameter tensor {name}")));
        }
        check_params(&params, &config)?;
        let extra = tensors.into_iter().map(|(k, (_, a))| (k, a)).collect();
        Ok(Self {
            config,
            params,
            extra,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, a: &Array) {
    put_u64(out, name.len() as u64);
    out.extend_from_slice(name.as_bytes());
    put_u64(out, a.shape().len() as u64);
    for &e in a.shape() {
        put_u64(out, e as u64);
    }
    for v in a.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn error_at(&self, offset: usize, msg: &str) -> CheckpointError {
        CheckpointError::Format {
            offset,
            msg: msg.to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| self.error_at(self.pos, &format!("truncated: need {n} more bytes")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn len_field(&mut self) -> Result<usize, CheckpointError> {
        let at = self.pos;
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| self.error_at(at, "length does not fit in memory"))
    }
}
