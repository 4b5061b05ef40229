//! ELU+1 linear attention.
//!
//! `num = φ(Q)·(φ(K)ᵀV)`, `den_i = φ(q_i)·Σ_j φ(k_j)`, `out_i = num_i / max(den_i, eps)`.
//! The unnormalized variant (`elu_denominator = false`) returns `num`.

use super::{check_grad_shape, check_qkv, key_valid, AttentionConfig, KeyMask};
use crate::error::Result;
use crate::linalg::{dot, elu, elu_derivative, gemm, gemm_a_bt, gemm_acc, gemm_at_b, Matrix};

#[derive(Clone, Debug)]
pub struct EluCache {
    q: Matrix,
    k: Matrix,
    v: Matrix,
    phi_q: Matrix,
    phi_k: Matrix,
    kv: Matrix,
    key_sum: Vec<f64>,
    den: Vec<f64>,
    out: Matrix,
    mask: Option<Vec<bool>>,
    alpha: f64,
    eps: f64,
    normalize: bool,
}

impl EluCache {
    pub fn denominators(&self) -> &[f64] {
        &self.den
    }
}

#[inline]
fn phi(x: f64, alpha: f64) -> f64 {
    elu(x, alpha) + 1.0
}

struct Features {
    phi_q: Matrix,
    phi_k: Matrix,
    kv: Matrix,
    key_sum: Vec<f64>,
}

fn features(q: &Matrix, k: &Matrix, v: &Matrix, alpha: f64, mask: KeyMask<'_>) -> Features {
    let phi_q = q.map(|x| phi(x, alpha));
    let mut phi_k = k.map(|x| phi(x, alpha));
    for j in 0..k.rows() {
        if !key_valid(mask, j) {
            phi_k.row_mut(j).fill(0.0);
        }
    }
    let mut kv = Matrix::zeros(k.cols(), v.cols());
    crate::linalg::gemm_at_b_acc(&phi_k, v, &mut kv);
    let mut key_sum = vec![0.0; k.cols()];
    for j in 0..k.rows() {
        crate::linalg::axpy(1.0, phi_k.row(j), &mut key_sum);
    }
    Features {
        phi_q,
        phi_k,
        kv,
        key_sum,
    }
}

/// Numerator into `out`, then row-normalize in place; returns raw denominators.
fn apply(f: &Features, cfg: &AttentionConfig, out: &mut Matrix) -> Vec<f64> {
    out.data_mut().fill(0.0);
    gemm_acc(&f.phi_q, &f.kv, out, crate::linalg::DEFAULT_TILE);
    let mut den = vec![0.0; f.phi_q.rows()];
    for (i, d) in den.iter_mut().enumerate() {
        *d = dot(f.phi_q.row(i), &f.key_sum);
        if cfg.elu_denominator {
            let inv = 1.0 / d.max(cfg.eps);
            out.row_mut(i).iter_mut().for_each(|x| *x *= inv);
        }
    }
    den
}

pub fn elu_linear_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    cfg: &AttentionConfig,
) -> Result<(Matrix, EluCache)> {
    elu_linear_attention_masked(q, k, v, cfg, None)
}

pub(crate) fn elu_linear_attention_masked(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    cfg: &AttentionConfig,
    mask: KeyMask<'_>,
) -> Result<(Matrix, EluCache)> {
    check_qkv(q, k, v, mask)?;
    let f = features(q, k, v, cfg.alpha, mask);
    let mut out = Matrix::zeros(q.rows(), v.cols());
    let den = apply(&f, cfg, &mut out);
    let cache = EluCache {
        q: q.clone(),
        k: k.clone(),
        v: v.clone(),
        phi_q: f.phi_q,
        phi_k: f.phi_k,
        kv: f.kv,
        key_sum: f.key_sum,
        den,
        out: out.clone(),
        mask: mask.map(<[bool]>::to_vec),
        alpha: cfg.alpha,
        eps: cfg.eps,
        normalize: cfg.elu_denominator,
    };
    Ok((out, cache))
}

/// Inference forward writing into `out`. Transient buffers: two `n×d`
/// feature maps, the `d×d` key-value product, the key sum and `n`
/// denominators.
pub fn elu_linear_attention_into(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    cfg: &AttentionConfig,
    mask: KeyMask<'_>,
    out: &mut Matrix,
) -> Result<()> {
    check_qkv(q, k, v, mask)?;
    if out.shape() != (q.rows(), v.cols()) {
        return Err(crate::error::shape_err!("output buffer {:?}", out.shape()));
    }
    let f = features(q, k, v, cfg.alpha, mask);
    apply(&f, cfg, out);
    Ok(())
}

pub fn elu_linear_attention_backward(
    cache: &EluCache,
    d_out: &Matrix,
) -> Result<(Matrix, Matrix, Matrix)> {
    check_grad_shape(cache.out.shape(), d_out)?;
    let n = cache.q.rows();
    let mut d_num = d_out.clone();
    let mut d_den = vec![0.0; n];
    if cache.normalize {
        for i in 0..n {
            let den = cache.den[i].max(cache.eps);
            if cache.den[i] > cache.eps {
                d_den[i] = -dot(d_out.row(i), cache.out.row(i)) / den;
            }
            d_num.row_mut(i).iter_mut().for_each(|x| *x /= den);
        }
    }

    let mut d_phi_q = gemm_a_bt(&d_num, &cache.kv)?;
    for (i, &dd) in d_den.iter().enumerate() {
        crate::linalg::axpy(dd, &cache.key_sum, d_phi_q.row_mut(i));
    }
    let d_kv = gemm_at_b(&cache.phi_q, &d_num)?;
    let mut d_key_sum = vec![0.0; cache.k.cols()];
    for (i, &dd) in d_den.iter().enumerate() {
        crate::linalg::axpy(dd, cache.phi_q.row(i), &mut d_key_sum);
    }

    let mut d_phi_k = gemm_a_bt(&cache.v, &d_kv)?;
    let mask = cache.mask.as_deref();
    for j in 0..n {
        let row = d_phi_k.row_mut(j);
        if key_valid(mask, j) {
            crate::linalg::axpy(1.0, &d_key_sum, row);
        } else {
            row.fill(0.0);
        }
    }
    let dv = gemm(&cache.phi_k, &d_kv)?;

    let alpha = cache.alpha;
    let mut dq = d_phi_q;
    for (g, &x) in dq.data_mut().iter_mut().zip(cache.q.data()) {
        *g *= elu_derivative(x, alpha);
    }
    let mut dk = d_phi_k;
    for (g, &x) in dk.data_mut().iter_mut().zip(cache.k.data()) {
        *g *= elu_derivative(x, alpha);
    }
    Ok((dq, dk, dv))
}
