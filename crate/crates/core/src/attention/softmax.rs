//! Scaled dot-product attention, the quadratic baseline.

use super::{check_grad_shape, check_qkv, key_valid, KeyMask};
use crate::error::{Error, Result};
use crate::linalg::{gemm, gemm_a_bt, gemm_a_bt_acc, gemm_acc, gemm_at_b, softmax_in_place, Matrix};

#[derive(Clone, Debug)]
pub struct SoftmaxCache {
    q: Matrix,
    k: Matrix,
    v: Matrix,
    probs: Matrix,
    scale: f64,
}

impl SoftmaxCache {
    pub fn probs(&self) -> &Matrix {
        &self.probs
    }
}

/// Row-softmaxed `QKᵀ/√d_h`, with masked keys at probability zero.
fn attention_probs(q: &Matrix, k: &Matrix, mask: KeyMask<'_>) -> Result<(Matrix, f64)> {
    if !q.is_finite() || !k.is_finite() {
        return Err(Error::Numeric("softmax attention: non-finite Q or K".into()));
    }
    let n = k.rows();
    let scale = 1.0 / (q.cols() as f64).sqrt();
    let mut probs = Matrix::zeros(q.rows(), n);
    gemm_a_bt_acc(q, k, &mut probs, crate::linalg::DEFAULT_TILE);
    for i in 0..q.rows() {
        let row = probs.row_mut(i);
        for (j, s) in row.iter_mut().enumerate() {
            *s = if key_valid(mask, j) { *s * scale } else { f64::NEG_INFINITY };
        }
        softmax_in_place(row);
    }
    Ok((probs, scale))
}

pub fn softmax_attention(q: &Matrix, k: &Matrix, v: &Matrix) -> Result<(Matrix, SoftmaxCache)> {
    softmax_attention_masked(q, k, v, None)
}

pub(crate) fn softmax_attention_masked(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    mask: KeyMask<'_>,
) -> Result<(Matrix, SoftmaxCache)> {
    check_qkv(q, k, v, mask)?;
    let (probs, scale) = attention_probs(q, k, mask)?;
    let out = gemm(&probs, v)?;
    let cache = SoftmaxCache {
        q: q.clone(),
        k: k.clone(),
        v: v.clone(),
        probs,
        scale,
    };
    Ok((out, cache))
}

/// Inference forward writing into `out`. The only transient buffer is the
/// `n×n` probability matrix.
pub fn softmax_attention_into(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    mask: KeyMask<'_>,
    out: &mut Matrix,
) -> Result<()> {
    check_qkv(q, k, v, mask)?;
    if out.shape() != (q.rows(), v.cols()) {
        return Err(crate::error::shape_err!("output buffer {:?}", out.shape()));
    }
    let (probs, _) = attention_probs(q, k, mask)?;
    out.data_mut().fill(0.0);
    gemm_acc(&probs, v, out, crate::linalg::DEFAULT_TILE);
    Ok(())
}

pub fn softmax_attention_backward(
    cache: &SoftmaxCache,
    d_out: &Matrix,
) -> Result<(Matrix, Matrix, Matrix)> {
    check_grad_shape((cache.q.rows(), cache.v.cols()), d_out)?;
    let p = &cache.probs;
    let dv = gemm_at_b(p, d_out)?;
    let dp = gemm_a_bt(d_out, &cache.v)?;
    let mut ds = Matrix::zeros(p.rows(), p.cols());
    for i in 0..p.rows() {
        let (pr, dpr) = (p.row(i), dp.row(i));
        let inner: f64 = pr.iter().zip(dpr).map(|(a, b)| a * b).sum();
        for (s, (pij, dpij)) in ds.row_mut(i).iter_mut().zip(pr.iter().zip(dpr)) {
            *s = pij * (dpij - inner) * cache.scale;
        }
    }
    let dq = gemm(&ds, &cache.k)?;
    let dk = gemm_at_b(&ds, &cache.q)?;
    Ok((dq, dk, dv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::test_support::*;

    #[test]
    fn single_row_returns_value() {
        let mut r = rng(1);
        let (q, k, v) = (random_matrix(&mut r, 1, 3), random_matrix(&mut r, 1, 3), random_matrix(&mut r, 1, 3));
        let (out, _) = softmax_attention(&q, &k, &v).unwrap();
        assert!(out.max_abs_diff(&v) < 1e-15);
    }

    #[test]
    fn identical_keys_average_values() {
        let mut r = rng(2);
        let q = random_matrix(&mut r, 5, 3);
        let key = random_matrix(&mut r, 1, 3);
        let k = Matrix::from_fn(5, 3, |_, j| key.get(0, j));
        let v = random_matrix(&mut r, 5, 3);
        let (out, _) = softmax_attention(&q, &k, &v).unwrap();
        for j in 0..3 {
            let mean = (0..5).map(|i| v.get(i, j)).sum::<f64>() / 5.0;
            for i in 0..5 {
                assert!((out.get(i, j) - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matches_scalar_oracle() {
        let mut r = rng(3);
        let (q, k, v) = (random_matrix(&mut r, 4, 3), random_matrix(&mut r, 4, 3), random_matrix(&mut r, 4, 3));
        let (out, _) = softmax_attention(&q, &k, &v).unwrap();
        for i in 0..4 {
            let scores: Vec<f64> = (0..4)
                .map(|j| (0..3).map(|c| q.get(i, c) * k.get(j, c)).sum::<f64>() / 3f64.sqrt())
                .collect();
            let z: f64 = scores.iter().map(|s| s.exp()).sum();
            for c in 0..3 {
                let expect: f64 = (0..4).map(|j| scores[j].exp() / z * v.get(j, c)).sum();
                assert!((out.get(i, c) - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn into_variant_matches() {
        let mut r = rng(4);
        let (q, k, v) = (random_matrix(&mut r, 9, 4), random_matrix(&mut r, 9, 4), random_matrix(&mut r, 9, 4));
        let mask = [true, true, false, true, true, true, false, true, true];
        let (expect, _) = softmax_attention_masked(&q, &k, &v, Some(&mask)).unwrap();
        let mut out = Matrix::filled(9, 4, 3.0);
        softmax_attention_into(&q, &k, &v, Some(&mask), &mut out).unwrap();
        assert_eq!(out, expect);
    }

    #[test]
    fn zero_output_gradient_gives_zero_grads() {
        let mut r = rng(5);
        let (q, k, v) = (random_matrix(&mut r, 5, 3), random_matrix(&mut r, 5, 3), random_matrix(&mut r, 5, 3));
        let (_, cache) = softmax_attention(&q, &k, &v).unwrap();
        let (dq, dk, dv) = softmax_attention_backward(&cache, &Matrix::zeros(5, 3)).unwrap();
        for g in [dq, dk, dv] {
            assert_eq!(g.max_abs(), 0.0);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = rng(6);
        let (q, k, v) = (random_matrix(&mut r, 5, 3), random_matrix(&mut r, 5, 3), random_matrix(&mut r, 5, 3));
        let g = random_matrix(&mut r, 5, 3);
        let (_, cache) = softmax_attention(&q, &k, &v).unwrap();
        let (dq, dk, dv) = softmax_attention_backward(&cache, &g).unwrap();
        let loss = |q: &Matrix, k: &Matrix, v: &Matrix| softmax_attention(q, k, v).unwrap().0.dot(&g);
        assert!(rel_err(&dq, &numeric_grad(&q, 1e-5, |x| loss(x, &k, &v))) < 1e-4);
        assert!(rel_err(&dk, &numeric_grad(&k, 1e-5, |x| loss(&q, x, &v))) < 1e-4);
        assert!(rel_err(&dv, &numeric_grad(&v, 1e-5, |x| loss(&q, &k, x))) < 1e-4);
    }

    #[test]
    fn permuting_keys_and_values_permutes_their_gradients() {
        let mut r = rng(7);
        let (q, k, v) = (random_matrix(&mut r, 5, 3), random_matrix(&mut r, 5, 3), random_matrix(&mut r, 5, 3));
        let g = random_matrix(&mut r, 5, 3);
        let perm = [3usize, 0, 4, 1, 2];
        let permute = |m: &Matrix| Matrix::from_fn(5, 3, |i, j| m.get(perm[i], j));
        let (out, cache) = softmax_attention(&q, &k, &v).unwrap();
        let (out_p, cache_p) = softmax_attention(&q, &permute(&k), &permute(&v)).unwrap();
        assert!(out.max_abs_diff(&out_p) < 1e-14);
        let (dq, dk, dv) = softmax_attention_backward(&cache, &g).unwrap();
        let (dq_p, dk_p, dv_p) = softmax_attention_backward(&cache_p, &g).unwrap();
        assert!(dq.max_abs_diff(&dq_p) < 1e-14);
        assert!(permute(&dk).max_abs_diff(&dk_p) < 1e-14);
        assert!(permute(&dv).max_abs_diff(&dv_p) < 1e-14);
    }

    #[test]
    fn stale_gradient_shape_is_usage_error() {
        let mut r = rng(8);
        let x = random_matrix(&mut r, 3, 2);
        let (_, cache) = softmax_attention(&x, &x, &x).unwrap();
        assert!(matches!(
            softmax_attention_backward(&cache, &Matrix::zeros(4, 2)),
            Err(Error::Usage(_))
        ));
    }
}
