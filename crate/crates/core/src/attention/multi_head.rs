use rand::Rng;

use super::{attend, attend_backward, AttentionConfig, HeadCache, KeyMask};
use crate::error::{shape_err, Result};
use crate::linalg::{gemm, gemm_a_bt, gemm_at_b, Matrix};
use crate::parallel;

/// Learnable tensors of one attention layer.
///
/// `w_q[i]`, `w_k[i]`, `w_v[i]` are `d×d_h` projections for head `i`,
/// `w_o` is `d×d`. `m` is the cosine length-scale exponent, one scalar
/// shared by every head of the layer.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub w_q: Vec<Matrix>,
    pub w_k: Vec<Matrix>,
    pub w_v: Vec<Matrix>,
    pub w_o: Matrix,
    pub m: f64,
}

impl AttentionParams {
    pub fn init(rng: &mut impl Rng, dim: usize, heads: usize, std: f64) -> Self {
        let head_dim = dim / heads;
        let mut proj = |rows, cols| crate::encoder::truncated_normal(rng, rows, cols, std);
        let w_q = (0..heads).map(|_| proj(dim, head_dim)).collect();
        let w_k = (0..heads).map(|_| proj(dim, head_dim)).collect();
        let w_v = (0..heads).map(|_| proj(dim, head_dim)).collect();
        let w_o = proj(dim, dim);
        Self {
            w_q,
            w_k,
            w_v,
            w_o,
            m: 1.0,
        }
    }

    /// All projections identity-sliced: head `i` reads features
    /// `i·d_h..(i+1)·d_h`. With one head every projection is `I`.
    pub fn identity(dim: usize, heads: usize) -> Self {
        let head_dim = dim / heads;
        let slice = |h: usize| Matrix::from_fn(dim, head_dim, |r, c| f64::from(u8::from(r == h * head_dim + c)));
        Self {
            w_q: (0..heads).map(slice).collect(),
            w_k: (0..heads).map(slice).collect(),
            w_v: (0..heads).map(slice).collect(),
            w_o: Matrix::identity(dim),
            m: 1.0,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        Self {
            w_q: self.w_q.iter().map(z).collect(),
            w_k: self.w_k.iter().map(z).collect(),
            w_v: self.w_v.iter().map(z).collect(),
            w_o: z(&self.w_o),
            m: 0.0,
        }
    }

    pub fn heads(&self) -> usize {
        self.w_q.len()
    }

    pub fn dim(&self) -> usize {
        self.w_o.rows()
    }
}

#[derive(Clone, Debug)]
pub struct MhaCache {
    input: Matrix,
    concat: Matrix,
    heads: Vec<HeadCache>,
}

/// `concat(head_1..head_h) · W^o` with `head_i = mechanism(H W_i^Q, H W_i^K, H W_i^V)`.
pub fn multi_head_attention(
    h: &Matrix,
    params: &AttentionParams,
    cfg: &AttentionConfig,
    mask: KeyMask<'_>,
) -> Result<(Matrix, MhaCache)> {
    let dim = h.cols();
    cfg.validate(dim)?;
    if params.heads() != cfg.heads || params.dim() != dim {
        return Err(shape_err!(
            "parameters for {} heads of dim {} used with {} heads on dim {dim}",
            params.heads(),
            params.dim(),
            cfg.heads
        ));
    }
    let head_dim = dim / cfg.heads;
    let per_head = parallel::map_range(cfg.heads, |i| -> Result<(Matrix, HeadCache)> {
        let q = gemm(h, &params.w_q[i])?;
        let k = gemm(h, &params.w_k[i])?;
        let v = gemm(h, &params.w_v[i])?;
        attend(&q, &k, &v, params.m, cfg, mask)
    });
    let mut concat = Matrix::zeros(h.rows(), dim);
    let mut heads = Vec::with_capacity(cfg.heads);
    for (i, res) in per_head.into_iter().enumerate() {
        let (out, cache) = res?;
        concat.set_columns(i * head_dim, &out);
        heads.push(cache);
    }
    let out = gemm(&concat, &params.w_o)?;
    Ok((
        out,
        MhaCache {
            input: h.clone(),
            concat,
            heads,
        },
    ))
}

/// Returns `(dH, parameter gradients)`.
pub fn multi_head_attention_backward(
    cache: &MhaCache,
    params: &AttentionParams,
    d_out: &Matrix,
) -> Result<(Matrix, AttentionParams)> {
    let head_dim = params.dim() / params.heads();
    let d_w_o = gemm_at_b(&cache.concat, d_out)?;
    let d_concat = gemm_a_bt(d_out, &params.w_o)?;
    let h = &cache.input;

    let per_head = parallel::map_range(params.heads(), |i| -> Result<_> {
        let g = d_concat.columns(i * head_dim, head_dim);
        let hg = attend_backward(&cache.heads[i], &g)?;
        let d_wq = gemm_at_b(h, &hg.dq)?;
        let d_wk = gemm_at_b(h, &hg.dk)?;
        let d_wv = gemm_at_b(h, &hg.dv)?;
        let mut dh = gemm_a_bt(&hg.dq, &params.w_q[i])?;
        dh.add_assign(&gemm_a_bt(&hg.dk, &params.w_k[i])?);
        dh.add_assign(&gemm_a_bt(&hg.dv, &params.w_v[i])?);
        Ok((d_wq, d_wk, d_wv, dh, hg.dm))
    });

    let mut grads = AttentionParams {
        w_q: Vec::with_capacity(params.heads()),
        w_k: Vec::with_capacity(params.heads()),
        w_v: Vec::with_capacity(params.heads()),
        w_o: d_w_o,
        m: 0.0,
    };
    let mut d_h = Matrix::zeros(h.rows(), h.cols());
    for res in per_head {
        let (d_wq, d_wk, d_wv, dh, dm) = res?;
        grads.w_q.push(d_wq);
        grads.w_k.push(d_wk);
        grads.w_v.push(d_wv);
        d_h.add_assign(&dh);
        grads.m += dm;
    }
    Ok((d_h, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::test_support::*;
    use crate::attention::Mechanism;

    #[test]
    fn identity_projections_reduce_to_mechanism() {
        let mut r = rng(31);
        let h = random_matrix(&mut r, 7, 4);
        let params = AttentionParams::identity(4, 1);
        for mech in Mechanism::ALL {
            let cfg = AttentionConfig::new(mech);
            let (out, _) = multi_head_attention(&h, &params, &cfg, None).unwrap();
            let (expect, _) = attend(&h, &h, &h, 1.0, &cfg, None).unwrap();
            assert!(out.max_abs_diff(&expect) < 1e-12, "{mech}");
        }
    }

    #[test]
    fn two_heads_match_slice_and_stitch() {
        let mut r = rng(32);
        let h = random_matrix(&mut r, 6, 4);
        let params = AttentionParams::init(&mut r, 4, 2, 0.5);
        for mech in Mechanism::ALL {
            let cfg = AttentionConfig::new(mech).with_heads(2);
            let (out, _) = multi_head_attention(&h, &params, &cfg, None).unwrap();
            let mut stitched = Matrix::zeros(6, 4);
            for i in 0..2 {
                let q = gemm(&h, &params.w_q[i]).unwrap();
                let k = gemm(&h, &params.w_k[i]).unwrap();
                let v = gemm(&h, &params.w_v[i]).unwrap();
                let head = match mech {
                    Mechanism::Cosine => crate::attention::cosine_attention_naive(&q, &k, &v, 1.0, cfg.eps),
                    _ => attend(&q, &k, &v, 1.0, &cfg, None).unwrap().0,
                };
                for row in 0..6 {
                    for c in 0..2 {
                        stitched.set(row, i * 2 + c, head.get(row, c));
                    }
                }
            }
            let expect = gemm(&stitched, &params.w_o).unwrap();
            assert!(out.max_abs_diff(&expect) < 1e-10, "{mech}");
            assert_eq!(out.shape(), (6, 4));
        }
    }

    #[test]
    fn indivisible_dim_is_shape_error() {
        let mut r = rng(33);
        let h = random_matrix(&mut r, 3, 5);
        let params = AttentionParams::identity(5, 1);
        let cfg = AttentionConfig::new(Mechanism::Softmax).with_heads(2);
        assert!(matches!(
            multi_head_attention(&h, &params, &cfg, None),
            Err(crate::error::Error::Shape(_))
        ));
    }

    #[test]
    fn backward_matches_finite_differences() {
        for mech in Mechanism::ALL {
            let mut r = rng(34);
            let h = random_matrix(&mut r, 5, 4);
            let mut params = AttentionParams::init(&mut r, 4, 2, 0.5);
            params.m = 0.8;
            let g = random_matrix(&mut r, 5, 4);
            let mask = [true, true, true, false, true];
            let cfg = AttentionConfig::new(mech).with_heads(2);
            let loss = |h: &Matrix, p: &AttentionParams| {
                multi_head_attention(h, p, &cfg, Some(&mask)).unwrap().0.dot(&g)
            };
            let (_, cache) = multi_head_attention(&h, &params, &cfg, Some(&mask)).unwrap();
            let (dh, grads) = multi_head_attention_backward(&cache, &params, &g).unwrap();
            assert!(rel_err(&dh, &numeric_grad(&h, 1e-5, |x| loss(x, &params))) < 1e-4, "{mech} dH");
            let fd_wo = numeric_grad(&params.w_o, 1e-5, |x| {
                let mut p = params.clone();
                p.w_o = x.clone();
                loss(&h, &p)
            });
            assert!(rel_err(&grads.w_o, &fd_wo) < 1e-4, "{mech} dWo");
            for i in 0..2 {
                let fd = numeric_grad(&params.w_k[i], 1e-5, |x| {
                    let mut p = params.clone();
                    p.w_k[i] = x.clone();
                    loss(&h, &p)
                });
                assert!(rel_err(&grads.w_k[i], &fd) < 1e-4, "{mech} dWk{i}");
            }
            if mech == Mechanism::Cosine {
                let step = 1e-5;
                let mut up = params.clone();
                up.m += step;
                let mut down = params.clone();
                down.m -= step;
                let fd = (loss(&h, &up) - loss(&h, &down)) / (2.0 * step);
                assert!((grads.m - fd).abs() / fd.abs().max(1e-6) < 1e-4);
            } else {
                assert_eq!(grads.m, 0.0);
            }
        }
    }
}
