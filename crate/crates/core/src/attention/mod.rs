//! Three interchangeable self-attention mechanisms behind one interface.
//!
//! * [`Mechanism::Softmax`]: scaled dot-product attention, materializes the
//!   `n×n` score matrix.
//! * [`Mechanism::EluLinear`]: `φ(x) = ELU(x) + 1` feature map applied to
//!   queries and keys, contracted as `φ(Q)(φ(K)ᵀV)`.
//! * [`Mechanism::Cosine`]: row-wise L2-normalized queries and keys with a
//!   learnable `1/n^m` scale, computed by a single tiled pass that only keeps
//!   a `d×d` accumulator and one tile of rows alive.
//!
//! Every mechanism has a forward that returns a cache and a backward that
//! turns an output gradient into `(dQ, dK, dV)` (plus `dm` for cosine).
//! None of the kernels apply a causal mask; an optional key mask removes
//! padded positions.

mod cosine;
mod elu_linear;
mod multi_head;
mod softmax;

use std::fmt;
use std::str::FromStr;

use crate::error::{usage_err, Error, Result};
use crate::linalg::{Matrix, DEFAULT_NORM_EPS};

pub use cosine::{
    cosine_attention_backward, cosine_attention_fused, cosine_attention_fused_into,
    cosine_attention_naive, cosine_attention_naive_masked, CosineCache,
};
pub use elu_linear::{
    elu_linear_attention, elu_linear_attention_backward, elu_linear_attention_into, EluCache,
};
pub use multi_head::{
    multi_head_attention, multi_head_attention_backward, AttentionParams, MhaCache,
};
pub use softmax::{
    softmax_attention, softmax_attention_backward, softmax_attention_into, SoftmaxCache,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mechanism {
    Softmax,
    EluLinear,
    Cosine,
}

impl Mechanism {
    pub const ALL: [Mechanism; 3] = [Mechanism::Softmax, Mechanism::EluLinear, Mechanism::Cosine];

    pub fn as_str(self) -> &'static str {
        match self {
            Mechanism::Softmax => "softmax",
            Mechanism::EluLinear => "elu_linear",
            Mechanism::Cosine => "cosine",
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(Mechanism::Softmax),
            "elu_linear" => Ok(Mechanism::EluLinear),
            "cosine" => Ok(Mechanism::Cosine),
            other => Err(usage_err!(
                "unknown mechanism {other:?} (expected softmax|elu_linear|cosine)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionConfig {
    pub mechanism: Mechanism,
    /// Guard under the square root of row norms, and the floor of the
    /// ELU-linear denominator.
    pub eps: f64,
    /// ELU α.
    pub alpha: f64,
    /// Rows per streaming tile in the fused cosine kernel.
    pub tile_size: usize,
    pub heads: usize,
    /// Divide ELU-linear output by `φ(q_i)·Σ_j φ(k_j)`. When false the
    /// mechanism is the bare two-GEMM numerator.
    pub elu_denominator: bool,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            mechanism: Mechanism::Cosine,
            eps: DEFAULT_NORM_EPS,
            alpha: 1.0,
            tile_size: 32,
            heads: 1,
            elu_denominator: true,
        }
    }
}

impl AttentionConfig {
    pub fn new(mechanism: Mechanism) -> Self {
        Self {
            mechanism,
            ..Self::default()
        }
    }

    pub fn with_heads(mut self, heads: usize) -> Self {
        self.heads = heads;
        self
    }

    pub fn with_tile(mut self, tile_size: usize) -> Self {
        self.tile_size = tile_size;
        self
    }

    pub fn validate(&self, model_dim: usize) -> Result<()> {
        if self.tile_size == 0 {
            return Err(usage_err!("tile size must be >= 1"));
        }
        if self.heads == 0 {
            return Err(usage_err!("head count must be >= 1"));
        }
        if !model_dim.is_multiple_of(self.heads) {
            return Err(crate::error::shape_err!(
                "model dim {model_dim} not divisible by {} heads",
                self.heads
            ));
        }
        if !(self.eps > 0.0) || !(self.alpha > 0.0) {
            return Err(usage_err!("eps and alpha must be positive"));
        }
        Ok(())
    }
}

/// Per-key validity. `None` means every key participates.
pub type KeyMask<'a> = Option<&'a [bool]>;

#[inline]
pub(crate) fn key_valid(mask: KeyMask<'_>, j: usize) -> bool {
    mask.is_none_or(|m| m[j])
}

pub(crate) fn valid_count(mask: KeyMask<'_>, n: usize) -> usize {
    mask.map_or(n, |m| m.iter().filter(|&&v| v).count())
}

pub(crate) fn check_qkv(q: &Matrix, k: &Matrix, v: &Matrix, mask: KeyMask<'_>) -> Result<()> {
    if q.shape() != k.shape() || k.rows() != v.rows() {
        return Err(crate::error::shape_err!(
            "attention inputs Q{:?} K{:?} V{:?} disagree",
            q.shape(),
            k.shape(),
            v.shape()
        ));
    }
    if let Some(m) = mask {
        if m.len() != k.rows() {
            return Err(crate::error::shape_err!(
                "key mask has {} entries for {} keys",
                m.len(),
                k.rows()
            ));
        }
    }
    Ok(())
}

/// Forward state of one head, whichever mechanism produced it.
#[derive(Clone, Debug)]
pub enum HeadCache {
    Softmax(SoftmaxCache),
    EluLinear(EluCache),
    Cosine(CosineCache),
}

/// Gradient of one head with respect to its inputs.
#[derive(Clone, Debug)]
pub struct HeadGrads {
    pub dq: Matrix,
    pub dk: Matrix,
    pub dv: Matrix,
    /// Gradient of the cosine scale exponent; zero for other mechanisms.
    pub dm: f64,
}

/// Run the configured mechanism on one head.
pub fn attend(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    m: f64,
    cfg: &AttentionConfig,
    mask: KeyMask<'_>,
) -> Result<(Matrix, HeadCache)> {
    Ok(match cfg.mechanism {
        Mechanism::Softmax => {
            let (out, c) = softmax::softmax_attention_masked(q, k, v, mask)?;
            (out, HeadCache::Softmax(c))
        }
        Mechanism::EluLinear => {
            let (out, c) = elu_linear::elu_linear_attention_masked(q, k, v, cfg, mask)?;
            (out, HeadCache::EluLinear(c))
        }
        Mechanism::Cosine => {
            let (out, c) = cosine::cosine_attention_fused_masked(q, k, v, m, cfg, mask)?;
            (out, HeadCache::Cosine(c))
        }
    })
}

pub fn attend_backward(cache: &HeadCache, d_out: &Matrix) -> Result<HeadGrads> {
    match cache {
        HeadCache::Softmax(c) => {
            let (dq, dk, dv) = softmax_attention_backward(c, d_out)?;
            Ok(HeadGrads { dq, dk, dv, dm: 0.0 })
        }
        HeadCache::EluLinear(c) => {
            let (dq, dk, dv) = elu_linear_attention_backward(c, d_out)?;
            Ok(HeadGrads { dq, dk, dv, dm: 0.0 })
        }
        HeadCache::Cosine(c) => {
            let (dq, dk, dv, dm) = cosine_attention_backward(c, d_out)?;
            Ok(HeadGrads { dq, dk, dv, dm })
        }
    }
}

pub(crate) fn check_grad_shape(expected: (usize, usize), d_out: &Matrix) -> Result<()> {
    if d_out.shape() != expected {
        return Err(usage_err!(
            "output gradient {:?} does not match cached forward output {:?}",
            d_out.shape(),
            expected
        ));
    }
    Ok(())
}
