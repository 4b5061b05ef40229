use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::block::{block_backward, block_forward, dropout, dropout_backward, BlockCache};
use super::params::{EncoderParams, LayerParams, ModelConfig, PAD};
use crate::attention::AttentionParams;
use crate::error::{data_err, usage_err, Result};
use crate::linalg::{gemm, gemm_a_bt, gemm_at_b, Matrix};
use crate::parallel;

/// Sequences per gradient-accumulation chunk. Chunks are fixed by index, so
/// the reduction order does not depend on the thread count.
const GRAD_CHUNK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// One padded token sequence and the positions whose items are predicted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SequenceInput {
    pub tokens: Vec<u32>,
    pub positions: Vec<usize>,
}

/// `E_t = item_embeddings[s_t] + position_embeddings[t]`.
pub fn embed(tokens: &[u32], params: &EncoderParams) -> Result<Matrix> {
    let n = tokens.len();
    if n == 0 {
        return Err(data_err!("empty token sequence"));
    }
    if n > params.position_embeddings.rows() {
        return Err(data_err!(
            "sequence of length {n} exceeds maximum length {}",
            params.position_embeddings.rows()
        ));
    }
    let rows = params.item_embeddings.rows();
    let mut out = Matrix::zeros(n, params.dim());
    for (t, &id) in tokens.iter().enumerate() {
        if id as usize >= rows {
            return Err(data_err!("token id {id} outside [0, {}]", rows - 1));
        }
        let dst = out.row_mut(t);
        for ((o, a), b) in dst
            .iter_mut()
            .zip(params.item_embeddings.row(id as usize))
            .zip(params.position_embeddings.row(t))
        {
            *o = a + b;
        }
    }
    Ok(out)
}

/// `logits = h·W + b` over every token column, PAD and MASK included.
pub fn prediction_scores(h: &Matrix, params: &EncoderParams) -> Result<Matrix> {
    let mut logits = gemm(h, &params.head_w)?;
    for i in 0..logits.rows() {
        crate::linalg::axpy(1.0, params.head_b.data(), logits.row_mut(i));
    }
    Ok(logits)
}

pub fn key_mask(tokens: &[u32]) -> Vec<bool> {
    tokens.iter().map(|&t| t != PAD).collect()
}

#[derive(Clone, Debug)]
struct SeqCache {
    tokens: Vec<u32>,
    positions: Vec<usize>,
    emb_drop: Option<Matrix>,
    blocks: Vec<BlockCache>,
}

/// Everything [`model_backward`] needs.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    seqs: Vec<SeqCache>,
    gathered: Matrix,
}

fn encode(
    seq: &SequenceInput,
    params: &EncoderParams,
    cfg: &ModelConfig,
    mut rng: Option<ChaCha8Rng>,
) -> Result<(Matrix, SeqCache)> {
    let mut h = embed(&seq.tokens, params)?;
    let n = h.rows();
    if let Some(&p) = seq.positions.iter().find(|&&p| p >= n) {
        return Err(usage_err!("masked position {p} outside sequence of length {n}"));
    }
    let emb_drop = dropout(&mut h, cfg.dropout, rng.as_mut());
    let mask = key_mask(&seq.tokens);
    let mut blocks = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let (next, cache) = block_forward(&h, layer, cfg, Some(&mask), rng.as_mut())?;
        h = next;
        blocks.push(cache);
    }
    let mut gathered = Matrix::zeros(seq.positions.len().max(1), h.cols());
    for (r, &p) in seq.positions.iter().enumerate() {
        gathered.row_mut(r).copy_from_slice(h.row(p));
    }
    Ok((
        gathered,
        SeqCache {
            tokens: seq.tokens.clone(),
            positions: seq.positions.clone(),
            emb_drop,
            blocks,
        },
    ))
}

/// Run the encoder over a batch and return logits for every requested
/// position, stacked in batch order.
///
/// Dropout is active only in [`Mode::Train`]; sequence `i` draws its masks
/// from stream `i` of a ChaCha generator seeded with `seed`.
pub fn model_forward(
    batch: &[SequenceInput],
    params: &EncoderParams,
    cfg: &ModelConfig,
    mode: Mode,
    seed: u64,
) -> Result<(Matrix, ForwardCache)> {
    let total: usize = batch.iter().map(|s| s.positions.len()).sum();
    if total == 0 {
        return Err(usage_err!("batch has no positions to predict"));
    }
    let use_dropout = mode == Mode::Train && cfg.dropout > 0.0;
    let encoded = parallel::map_range(batch.len(), |i| {
        let rng = use_dropout.then(|| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(i as u64);
            r
        });
        encode(&batch[i], params, cfg, rng)
    });
    let mut gathered = Matrix::zeros(total, params.dim());
    let mut seqs = Vec::with_capacity(batch.len());
    let mut row = 0;
    for res in encoded {
        let (g, cache) = res?;
        for r in 0..cache.positions.len() {
            gathered.row_mut(row).copy_from_slice(g.row(r));
            row += 1;
        }
        seqs.push(cache);
    }
    let logits = prediction_scores(&gathered, params)?;
    Ok((logits, ForwardCache { seqs, gathered }))
}

fn backward_sequence(
    cache: &SeqCache,
    params: &EncoderParams,
    d_gathered: &Matrix,
    offset: usize,
    grads: &mut EncoderParams,
) -> Result<()> {
    let n = cache.tokens.len();
    let mut dh = Matrix::zeros(n, params.dim());
    for (r, &p) in cache.positions.iter().enumerate() {
        crate::linalg::axpy(1.0, d_gathered.row(offset + r), dh.row_mut(p));
    }
    for (l, block) in cache.blocks.iter().enumerate().rev() {
        let (d_in, layer_grads) = block_backward(block, &params.layers[l], &dh)?;
        add_layer(&mut grads.layers[l], &layer_grads);
        dh = d_in;
    }
    let de = dropout_backward(&dh, &cache.emb_drop);
    for (t, &id) in cache.tokens.iter().enumerate() {
        crate::linalg::axpy(1.0, de.row(t), grads.item_embeddings.row_mut(id as usize));
        crate::linalg::axpy(1.0, de.row(t), grads.position_embeddings.row_mut(t));
    }
    Ok(())
}

/// Exact reverse pass from `dLogits` (stacked as in [`model_forward`]).
pub fn model_backward(
    cache: &ForwardCache,
    params: &EncoderParams,
    d_logits: &Matrix,
) -> Result<EncoderParams> {
    if d_logits.shape() != (cache.gathered.rows(), params.head_w.cols()) {
        return Err(usage_err!(
            "logit gradient {:?} does not match forward output ({}, {})",
            d_logits.shape(),
            cache.gathered.rows(),
            params.head_w.cols()
        ));
    }
    let d_gathered = gemm_a_bt(d_logits, &params.head_w)?;
    let mut offsets = Vec::with_capacity(cache.seqs.len());
    let mut acc = 0;
    for s in &cache.seqs {
        offsets.push(acc);
        acc += s.positions.len();
    }

    let chunks = cache.seqs.len().div_ceil(GRAD_CHUNK);
    let partial = parallel::map_range(chunks, |c| -> Result<EncoderParams> {
        let mut g = params.zeros_like();
        let end = ((c + 1) * GRAD_CHUNK).min(cache.seqs.len());
        for i in c * GRAD_CHUNK..end {
            backward_sequence(&cache.seqs[i], params, &d_gathered, offsets[i], &mut g)?;
        }
        Ok(g)
    });

    let mut grads = params.zeros_like();
    for g in partial {
        grads.add_assign(&g?);
    }
    grads.head_w = gemm_at_b(&cache.gathered, d_logits)?;
    let mut head_b = Matrix::zeros(1, d_logits.cols());
    for i in 0..d_logits.rows() {
        crate::linalg::axpy(1.0, d_logits.row(i), head_b.data_mut());
    }
    grads.head_b = head_b;
    Ok(grads)
}

fn add_attention(dst: &mut AttentionParams, src: &AttentionParams) {
    for (a, b) in dst
        .w_q
        .iter_mut()
        .chain(dst.w_k.iter_mut())
        .chain(dst.w_v.iter_mut())
        .zip(src.w_q.iter().chain(&src.w_k).chain(&src.w_v))
    {
        a.add_assign(b);
    }
    dst.w_o.add_assign(&src.w_o);
    dst.m += src.m;
}

fn add_layer(dst: &mut LayerParams, src: &LayerParams) {
    add_attention(&mut dst.attn, &src.attn);
    dst.w1.add_assign(&src.w1);
    dst.b1.add_assign(&src.b1);
    dst.w2.add_assign(&src.w2);
    dst.b2.add_assign(&src.b2);
    dst.ln1_gain.add_assign(&src.ln1_gain);
    dst.ln1_bias.add_assign(&src.ln1_bias);
    dst.ln2_gain.add_assign(&src.ln2_gain);
    dst.ln2_bias.add_assign(&src.ln2_bias);
}

/// Logits for the final position of each (already MASK-terminated) sequence.
pub fn score_last_positions(
    sequences: &[Vec<u32>],
    params: &EncoderParams,
    cfg: &ModelConfig,
) -> Result<Matrix> {
    let batch: Vec<SequenceInput> = sequences
        .iter()
        .map(|t| SequenceInput {
            tokens: t.clone(),
            positions: vec![t.len().saturating_sub(1)],
        })
        .collect();
    Ok(model_forward(&batch, params, cfg, Mode::Infer, 0)?.0)
}
