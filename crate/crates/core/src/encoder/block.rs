//! Post-norm transformer block: `LN(H + Drop(MHA(H)))` then
//! `LN(H' + Drop(FFN(H')))` with a GELU feed-forward network.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{LayerParams, ModelConfig};
use crate::attention::{multi_head_attention, multi_head_attention_backward, KeyMask, MhaCache};
use crate::error::Result;
use crate::linalg::{gelu, gelu_derivative, gemm, gemm_a_bt, gemm_at_b, Matrix};

#[derive(Clone, Debug)]
pub struct LayerNormCache {
    normalized: Matrix,
    inv_std: Vec<f64>,
}

pub fn layer_norm(x: &Matrix, gain: &Matrix, bias: &Matrix, eps: f64) -> (Matrix, LayerNormCache) {
    let (n, d) = x.shape();
    let mut normalized = Matrix::zeros(n, d);
    let mut out = Matrix::zeros(n, d);
    let mut inv_std = Vec::with_capacity(n);
    for i in 0..n {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + eps).sqrt();
        inv_std.push(inv);
        for j in 0..d {
            let xh = (row[j] - mean) * inv;
            normalized.set(i, j, xh);
            out.set(i, j, gain.data()[j] * xh + bias.data()[j]);
        }
    }
    (out, LayerNormCache { normalized, inv_std })
}

/// Returns `(dx, dgain, dbias)`.
pub fn layer_norm_backward(cache: &LayerNormCache, gain: &Matrix, dy: &Matrix) -> (Matrix, Matrix, Matrix) {
    let (n, d) = dy.shape();
    let mut dx = Matrix::zeros(n, d);
    let mut d_gain = Matrix::zeros(1, d);
    let mut d_bias = Matrix::zeros(1, d);
    let mut dxh = vec![0.0; d];
    for i in 0..n {
        let xh = cache.normalized.row(i);
        let g = dy.row(i);
        for j in 0..d {
            d_gain.data_mut()[j] += g[j] * xh[j];
            d_bias.data_mut()[j] += g[j];
            dxh[j] = g[j] * gain.data()[j];
        }
        let mean_dxh = dxh.iter().sum::<f64>() / d as f64;
        let mean_dxh_xh = dxh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        let inv = cache.inv_std[i];
        for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
            *o = inv * (dxh[j] - mean_dxh - xh[j] * mean_dxh_xh);
        }
    }
    (dx, d_gain, d_bias)
}

/// Inverted dropout. Returns the scaled keep-mask, or `None` when inactive.
pub(crate) fn dropout(x: &mut Matrix, p: f64, rng: Option<&mut ChaCha8Rng>) -> Option<Matrix> {
    let rng = rng?;
    if p <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    let mask = Matrix::from_fn(x.rows(), x.cols(), |_, _| {
        if rng.random::<f64>() < p {
            0.0
        } else {
            keep
        }
    });
    for (v, m) in x.data_mut().iter_mut().zip(mask.data()) {
        *v *= m;
    }
    Some(mask)
}

pub(crate) fn dropout_backward(grad: &Matrix, mask: &Option<Matrix>) -> Matrix {
    match mask {
        Some(m) => grad.hadamard(m),
        None => grad.clone(),
    }
}

fn add_bias(x: &mut Matrix, bias: &Matrix) {
    for i in 0..x.rows() {
        for (v, b) in x.row_mut(i).iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
}

fn column_sums(x: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, x.cols());
    for i in 0..x.rows() {
        crate::linalg::axpy(1.0, x.row(i), out.data_mut());
    }
    out
}

#[derive(Clone, Debug)]
pub struct BlockCache {
    attn: MhaCache,
    attn_drop: Option<Matrix>,
    ln1: LayerNormCache,
    h1: Matrix,
    pre_gelu: Matrix,
    post_gelu: Matrix,
    ffn_drop: Option<Matrix>,
    ln2: LayerNormCache,
}

/// One encoder block. `rng = None` disables dropout.
pub fn block_forward(
    h: &Matrix,
    layer: &LayerParams,
    cfg: &ModelConfig,
    mask: KeyMask<'_>,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<(Matrix, BlockCache)> {
    let (mut a, attn) = multi_head_attention(h, &layer.attn, &cfg.attention, mask)?;
    let attn_drop = dropout(&mut a, cfg.dropout, rng.as_deref_mut());
    a.add_assign(h);
    let (h1, ln1) = layer_norm(&a, &layer.ln1_gain, &layer.ln1_bias, cfg.ln_eps);

    let mut pre_gelu = gemm(&h1, &layer.w1)?;
    add_bias(&mut pre_gelu, &layer.b1);
    let post_gelu = pre_gelu.map(gelu);
    let mut f = gemm(&post_gelu, &layer.w2)?;
    add_bias(&mut f, &layer.b2);
    let ffn_drop = dropout(&mut f, cfg.dropout, rng);
    f.add_assign(&h1);
    let (out, ln2) = layer_norm(&f, &layer.ln2_gain, &layer.ln2_bias, cfg.ln_eps);

    Ok((
        out,
        BlockCache {
            attn,
            attn_drop,
            ln1,
            h1,
            pre_gelu,
            post_gelu,
            ffn_drop,
            ln2,
        },
    ))
}

/// Returns `(dH, layer gradients)`.
pub fn block_backward(cache: &BlockCache, layer: &LayerParams, d_out: &Matrix) -> Result<(Matrix, LayerParams)> {
    let (dx2, ln2_gain, ln2_bias) = layer_norm_backward(&cache.ln2, &layer.ln2_gain, d_out);
    let df = dropout_backward(&dx2, &cache.ffn_drop);
    let w2 = gemm_at_b(&cache.post_gelu, &df)?;
    let b2 = column_sums(&df);
    let mut dz = gemm_a_bt(&df, &layer.w2)?;
    for (g, &z) in dz.data_mut().iter_mut().zip(cache.pre_gelu.data()) {
        *g *= gelu_derivative(z);
    }
    let w1 = gemm_at_b(&cache.h1, &dz)?;
    let b1 = column_sums(&dz);
    let mut dh1 = dx2;
    dh1.add_assign(&gemm_a_bt(&dz, &layer.w1)?);

    let (dx1, ln1_gain, ln1_bias) = layer_norm_backward(&cache.ln1, &layer.ln1_gain, &dh1);
    let da = dropout_backward(&dx1, &cache.attn_drop);
    let (dh_attn, attn) = multi_head_attention_backward(&cache.attn, &layer.attn, &da)?;
    let mut dh = dx1;
    dh.add_assign(&dh_attn);
    Ok((
        dh,
        LayerParams {
            attn,
            w1,
            b1,
            w2,
            b2,
            ln1_gain,
            ln1_bias,
            ln2_gain,
            ln2_bias,
        },
    ))
}
