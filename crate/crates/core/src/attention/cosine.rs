//! Cosine-similarity attention.
//!
//! `out = n^{-m} · Q̃ (K̃ᵀ V)` with `Q̃`, `K̃` the row-wise L2-normalized
//! queries and keys (`x / sqrt(‖x‖² + eps)`).
//!
//! The fused kernel makes one streaming pass over `K`/`V` in tiles of `T`
//! rows, normalizing each key row into a tile buffer and folding it into a
//! `d×d` accumulator, then streams `Q` through the same tile buffer and
//! multiplies by the accumulator. The tile buffer and the accumulator are
//! the only transient allocations, so the working set does not depend on
//! `n`. Tiles are reduced left to right, which makes the result
//! deterministic on one thread.

use super::{check_grad_shape, check_qkv, key_valid, valid_count, AttentionConfig, KeyMask};
use crate::error::{shape_err, Result};
use crate::linalg::{axpy, gemm, gemm_a_bt, gemm_at_b, guarded_norm, row_l2_normalize, Matrix};

#[derive(Clone, Debug)]
pub struct CosineCache {
    q: Matrix,
    k: Matrix,
    v: Matrix,
    q_norm: Vec<f64>,
    k_norm: Vec<f64>,
    /// `K̃ᵀV`, `d_h×d_h`.
    acc: Matrix,
    scale: f64,
    ln_n: f64,
    mask: Option<Vec<bool>>,
}

impl CosineCache {
    pub fn accumulator(&self) -> &Matrix {
        &self.acc
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

/// `n^{-m}` evaluated as `exp(-m ln n)`; zero when no key is valid.
fn length_scale(n_valid: usize, m: f64) -> (f64, f64) {
    if n_valid == 0 {
        return (0.0, 0.0);
    }
    let ln_n = (n_valid as f64).ln();
    ((-m * ln_n).exp(), ln_n)
}

/// Reference formulation that materializes the `n×n` similarity matrix.
pub fn cosine_attention_naive(q: &Matrix, k: &Matrix, v: &Matrix, m: f64, eps: f64) -> Matrix {
    cosine_attention_naive_masked(q, k, v, m, eps, None)
}

pub fn cosine_attention_naive_masked(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    m: f64,
    eps: f64,
    mask: KeyMask<'_>,
) -> Matrix {
    let qn = row_l2_normalize(q, eps);
    let mut kn = row_l2_normalize(k, eps);
    for j in 0..k.rows() {
        if !key_valid(mask, j) {
            kn.row_mut(j).fill(0.0);
        }
    }
    let (scale, _) = length_scale(valid_count(mask, k.rows()), m);
    let sim = gemm_a_bt(&qn, &kn).expect("shapes checked by caller");
    let mut out = gemm(&sim, v).expect("shapes checked by caller");
    out.scale_in_place(scale);
    out
}

struct RowNorms<'a> {
    q: &'a mut [f64],
    k: &'a mut [f64],
}

/// The fused two-phase kernel. Writes `out` and returns `(K̃ᵀV, scale, ln n)`.
#[allow(clippy::too_many_arguments)]
fn fused_kernel(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    m: f64,
    eps: f64,
    tile: usize,
    mask: KeyMask<'_>,
    out: &mut Matrix,
    mut norms: Option<RowNorms<'_>>,
) -> (Matrix, f64, f64) {
    let n = k.rows();
    let d = k.cols();
    let t = tile.clamp(1, n);
    let mut acc = Matrix::zeros(d, v.cols());
    let mut tile_buf = vec![0.0; t * d];

    // Phase 1: normalize key tiles on the fly, accumulate K̃ᵀV.
    for t0 in (0..n).step_by(t) {
        let t1 = (t0 + t).min(n);
        for (r, i) in (t0..t1).enumerate() {
            let dst = &mut tile_buf[r * d..(r + 1) * d];
            let src = k.row(i);
            let norm = guarded_norm(src, eps);
            if let Some(rn) = norms.as_mut() {
                rn.k[i] = norm;
            }
            if key_valid(mask, i) {
                let inv = 1.0 / norm;
                for (x, &y) in dst.iter_mut().zip(src) {
                    *x = y * inv;
                }
            } else {
                dst.fill(0.0);
            }
        }
        for (r, i) in (t0..t1).enumerate() {
            let v_row = v.row(i);
            for a in 0..d {
                let k_ia = tile_buf[r * d + a];
                if k_ia != 0.0 {
                    axpy(k_ia, v_row, acc.row_mut(a));
                }
            }
        }
    }

    let (scale, ln_n) = length_scale(valid_count(mask, n), m);

    // Phase 2: stream query tiles through the same buffer.
    for t0 in (0..q.rows()).step_by(t) {
        let t1 = (t0 + t).min(q.rows());
        for (r, i) in (t0..t1).enumerate() {
            let src = q.row(i);
            let norm = guarded_norm(src, eps);
            if let Some(rn) = norms.as_mut() {
                rn.q[i] = norm;
            }
            let inv = scale / norm;
            for (x, &y) in tile_buf[r * d..(r + 1) * d].iter_mut().zip(src) {
                *x = y * inv;
            }
        }
        for (r, i) in (t0..t1).enumerate() {
            let out_row = out.row_mut(i);
            out_row.fill(0.0);
            for a in 0..d {
                let q_ia = tile_buf[r * d + a];
                if q_ia != 0.0 {
                    axpy(q_ia, acc.row(a), out_row);
                }
            }
        }
    }
    (acc, scale, ln_n)
}

/// Fused forward returning the output and a cache for the backward pass.
pub fn cosine_attention_fused(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    m: f64,
    cfg: &AttentionConfig,
) -> Result<(Matrix, CosineCache)> {
    cosine_attention_fused_masked(q, k, v, m, cfg, None)
}

pub(crate) fn cosine_attention_fused_masked(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    m: f64,
    cfg: &AttentionConfig,
    mask: KeyMask<'_>,
) -> Result<(Matrix, CosineCache)> {
    check_qkv(q, k, v, mask)?;
    let mut out = Matrix::zeros(q.rows(), v.cols());
    let mut q_norm = vec![0.0; q.rows()];
    let mut k_norm = vec![0.0; k.rows()];
    let (acc, scale, ln_n) = fused_kernel(
        q,
        k,
        v,
        m,
        cfg.eps,
        cfg.tile_size,
        mask,
        &mut out,
        Some(RowNorms {
            q: &mut q_norm,
            k: &mut k_norm,
        }),
    );
    let cache = CosineCache {
        q: q.clone(),
        k: k.clone(),
        v: v.clone(),
        q_norm,
        k_norm,
        acc,
        scale,
        ln_n,
        mask: mask.map(<[bool]>::to_vec),
    };
    Ok((out, cache))
}

/// Inference forward writing into a caller-owned output. Allocates exactly
/// one `d×d` accumulator and one `min(T, n)×d` tile.
pub fn cosine_attention_fused_into(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    m: f64,
    cfg: &AttentionConfig,
    mask: KeyMask<'_>,
    out: &mut Matrix,
) -> Result<()> {
    check_qkv(q, k, v, mask)?;
    if out.shape() != (q.rows(), v.cols()) {
        return Err(shape_err!("output buffer {:?}", out.shape()));
    }
    fused_kernel(q, k, v, m, cfg.eps, cfg.tile_size, mask, out, None);
    Ok(())
}

/// Pull a gradient with respect to normalized rows back through
/// `x ↦ x / sqrt(‖x‖² + eps)`: `dx = (dx̃ − x̃ (x̃·dx̃)) / r`.
fn normalize_backward(x: &Matrix, norms: &[f64], d_norm: &Matrix) -> Matrix {
    let mut dx = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        let r = norms[i];
        let xr = x.row(i);
        let gr = d_norm.row(i);
        let proj: f64 = xr.iter().zip(gr).map(|(a, b)| a * b).sum::<f64>() / r;
        for ((o, &xa), &ga) in dx.row_mut(i).iter_mut().zip(xr).zip(gr) {
            *o = (ga - (xa / r) * proj) / r;
        }
    }
    dx
}

/// Exact gradients of the cosine formulation; only `d×d` intermediates
/// besides the `n×d` results.
pub fn cosine_attention_backward(
    cache: &CosineCache,
    d_out: &Matrix,
) -> Result<(Matrix, Matrix, Matrix, f64)> {
    check_grad_shape((cache.q.rows(), cache.v.cols()), d_out)?;
    let s = cache.scale;
    let mask = cache.mask.as_deref();

    let mut q_tilde = cache.q.clone();
    for (i, &r) in cache.q_norm.iter().enumerate() {
        q_tilde.row_mut(i).iter_mut().for_each(|x| *x /= r);
    }
    let mut k_tilde = cache.k.clone();
    for (j, &r) in cache.k_norm.iter().enumerate() {
        if key_valid(mask, j) {
            k_tilde.row_mut(j).iter_mut().for_each(|x| *x /= r);
        } else {
            k_tilde.row_mut(j).fill(0.0);
        }
    }

    let mut d_q_tilde = gemm_a_bt(d_out, &cache.acc)?;
    d_q_tilde.scale_in_place(s);
    let dm = -cache.ln_n * q_tilde.dot(&d_q_tilde);

    let mut d_acc = gemm_at_b(&q_tilde, d_out)?;
    d_acc.scale_in_place(s);
    let mut d_k_tilde = gemm_a_bt(&cache.v, &d_acc)?;
    for j in 0..cache.k.rows() {
        if !key_valid(mask, j) {
            d_k_tilde.row_mut(j).fill(0.0);
        }
    }
    let dv = gemm(&k_tilde, &d_acc)?;

    let dq = normalize_backward(&cache.q, &cache.q_norm, &d_q_tilde);
    let dk = normalize_backward(&cache.k, &cache.k_norm, &d_k_tilde);
    Ok((dq, dk, dv, dm))
}
