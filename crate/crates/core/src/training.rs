//! Masked-item objective, masking, gradient clipping, AdamW and the epoch loop.

use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::make_batches;
use crate::encoder::{model_backward, model_forward, EncoderParams, Mode, ModelConfig, SequenceInput, PAD};
use crate::error::{data_err, usage_err, Error, Result};
use crate::linalg::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskMode {
    /// Each real position is replaced by MASK with probability `p_mask`.
    Train,
    /// Only the final position is masked.
    Infer,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskedSequence {
    pub tokens: Vec<u32>,
    pub positions: Vec<usize>,
    pub targets: Vec<u32>,
}

/// Masked sequences of one mini-batch.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MaskBatch {
    pub entries: Vec<MaskedSequence>,
}

impl MaskBatch {
    pub fn inputs(&self) -> Vec<SequenceInput> {
        self.entries
            .iter()
            .map(|e| SequenceInput {
                tokens: e.tokens.clone(),
                positions: e.positions.clone(),
            })
            .collect()
    }

    /// Targets flattened in the row order of the stacked logits.
    pub fn targets(&self) -> Vec<u32> {
        self.entries.iter().flat_map(|e| e.targets.iter().copied()).collect()
    }
}

/// How masked positions are corrupted.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskOptions {
    pub p_mask: f64,
    pub mask_token: u32,
    /// Real items are `1..=vocab_size`.
    pub vocab_size: usize,
    /// 80% MASK, 10% random item, 10% unchanged. Off means pure MASK.
    pub bert_corruption: bool,
}

impl MaskOptions {
    pub fn new(p_mask: f64, vocab_size: usize) -> Self {
        Self {
            p_mask,
            mask_token: vocab_size as u32 + 1,
            vocab_size,
            bert_corruption: false,
        }
    }
}

pub fn mask_sequence(
    seq: &[u32],
    opts: &MaskOptions,
    rng: &mut impl Rng,
    mode: MaskMode,
) -> Result<MaskedSequence> {
    if !(opts.p_mask > 0.0 && opts.p_mask < 1.0) {
        return Err(usage_err!("mask probability must lie in (0, 1), got {}", opts.p_mask));
    }
    let real: Vec<usize> = (0..seq.len()).filter(|&i| seq[i] != PAD).collect();
    if real.is_empty() {
        return Err(data_err!("cannot mask an empty sequence"));
    }
    let positions = match mode {
        MaskMode::Infer => vec![seq.len() - 1],
        MaskMode::Train => loop {
            let picked: Vec<usize> = real
                .iter()
                .copied()
                .filter(|_| rng.random::<f64>() < opts.p_mask)
                .collect();
            if !picked.is_empty() {
                break picked;
            }
        },
    };
    let mut tokens = seq.to_vec();
    let targets: Vec<u32> = positions.iter().map(|&p| seq[p]).collect();
    if targets.contains(&PAD) {
        return Err(data_err!("final position of the sequence is padding"));
    }
    for &p in &positions {
        tokens[p] = if opts.bert_corruption && mode == MaskMode::Train {
            let u: f64 = rng.random();
            if u < 0.8 {
                opts.mask_token
            } else if u < 0.9 {
                rng.random_range(1..=opts.vocab_size as u32)
            } else {
                seq[p]
            }
        } else {
            opts.mask_token
        };
    }
    Ok(MaskedSequence {
        tokens,
        positions,
        targets,
    })
}

/// Mean negative log-likelihood of `targets` under a softmax restricted to
/// the real-item columns `1..cols-1`, and its gradient `(softmax − onehot)/k`.
pub fn nll_loss(logits: &Matrix, targets: &[u32]) -> Result<(f64, Matrix)> {
    let (k, cols) = logits.shape();
    if targets.len() != k {
        return Err(usage_err!("{} targets for {k} logit rows", targets.len()));
    }
    if cols < 3 {
        return Err(usage_err!("logits need PAD, MASK and at least one item column"));
    }
    let mask_col = cols - 1;
    let mut grad = Matrix::zeros(k, cols);
    let mut total = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        let t = t as usize;
        if t == PAD as usize || t >= mask_col {
            return Err(usage_err!("target {t} is not a real item id"));
        }
        let row = &logits.row(i)[1..mask_col];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&x| (x - max).exp()).sum();
        let log_z = max + sum.ln();
        total += log_z - logits.get(i, t);
        let g = grad.row_mut(i);
        for (j, &x) in row.iter().enumerate() {
            g[j + 1] = (x - log_z).exp() / k as f64;
        }
        g[t] -= 1.0 / k as f64;
    }
    Ok((total / k as f64, grad))
}

pub fn global_norm(grads: &EncoderParams) -> f64 {
    grads
        .slices()
        .iter()
        .flat_map(|s| s.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

/// Rescale so the global L2 norm is at most `max_norm`; returns the norm
/// before clipping. Idempotent: a clipped gradient is left untouched.
pub fn clip_gradients(grads: &mut EncoderParams, max_norm: f64) -> f64 {
    let before = global_norm(grads);
    let mut norm = before;
    while norm > max_norm {
        let s = (max_norm / norm).next_down();
        for slot in grads.slices_mut() {
            for x in slot.iter_mut() {
                *x *= s;
            }
        }
        norm = global_norm(grads);
    }
    before
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub first: EncoderParams,
    pub second: EncoderParams,
    pub step: u64,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl OptimizerState {
    pub fn new(params: &EncoderParams, lr: f64, weight_decay: f64) -> Self {
        Self {
            first: params.zeros_like(),
            second: params.zeros_like(),
            step: 0,
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update with decoupled weight decay.
pub fn adam_step(params: &mut EncoderParams, grads: &EncoderParams, state: &mut OptimizerState) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let (lr, wd, b1, b2, eps) = (state.lr, state.weight_decay, state.beta1, state.beta2, state.adam_eps);
    let p = params.slices_mut();
    let m = state.first.slices_mut();
    let v = state.second.slices_mut();
    for (((p, g), m), v) in p.into_iter().zip(grads.slices()).zip(m).zip(v) {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let update = (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            p[i] -= lr * wd * p[i] + lr * update;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub mask: MaskOptions,
    pub lr: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// A batch loss above `divergence_factor · ln|V|` is treated as divergence,
    /// as is any non-finite loss.
    pub divergence_factor: f64,
}

impl TrainConfig {
    pub fn new(model: ModelConfig) -> Self {
        let mask = MaskOptions::new(0.15, model.vocab_size);
        Self {
            model,
            mask,
            lr: 0.001,
            weight_decay: 0.001,
            clip_norm: 1.0,
            batch_size: 128,
            epochs: 20,
            seed: 42,
            divergence_factor: 100.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(usage_err!("batch size and epochs must be positive"));
        }
        if !(self.mask.p_mask > 0.0 && self.mask.p_mask < 1.0) {
            return Err(usage_err!("mask probability must lie in (0, 1)"));
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) || !(self.clip_norm > 0.0) {
            return Err(usage_err!("lr and weight decay must be >= 0, clip norm > 0"));
        }
        if self.mask.vocab_size != self.model.vocab_size {
            return Err(usage_err!("mask options and model disagree on the vocabulary"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub seconds: f64,
    pub peak_attn_bytes: usize,
}

pub struct Trained {
    pub params: EncoderParams,
    pub log: Vec<EpochLog>,
}

/// Per-epoch generator, derived from `(seed, epoch)`.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// Mini-batch masked-item training over `sequences` (internal item ids,
/// chronological). Each epoch reshuffles, masks, and takes one clipped
/// AdamW step per batch. `on_epoch` sees each log row as it completes.
pub fn train(
    sequences: &[Vec<u32>],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Trained> {
    cfg.validate()?;
    if sequences.is_empty() {
        return Err(data_err!("no training sequences"));
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = EncoderParams::init(&cfg.model, &mut init_rng);
    let mut state = OptimizerState::new(&params, cfg.lr, cfg.weight_decay);
    let limit = cfg.divergence_factor * (cfg.model.vocab_size as f64).ln().max(1.0);
    let peak_attn_bytes = crate::bench::attention_transient_bytes(
        &cfg.model.attention,
        cfg.model.max_len,
        cfg.model.dim / cfg.model.attention.heads,
    )?;

    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut rng = epoch_rng(cfg.seed, epoch);
        let batches = make_batches(sequences, cfg.model.max_len, cfg.batch_size, Some(&mut rng))?;
        let mut loss_sum = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            let mut masked = MaskBatch::default();
            for seq in &batch.tokens {
                masked.entries.push(mask_sequence(seq, &cfg.mask, &mut rng, MaskMode::Train)?);
            }
            let dropout_seed: u64 = rng.random();
            let (logits, cache) =
                model_forward(&masked.inputs(), &params, &cfg.model, Mode::Train, dropout_seed)?;
            let (loss, d_logits) = nll_loss(&logits, &masked.targets())?;
            if !loss.is_finite() || loss > limit {
                return Err(Error::Divergence {
                    epoch,
                    batch: b + 1,
                    loss,
                });
            }
            let mut grads = model_backward(&cache, &params, &d_logits)?;
            clip_gradients(&mut grads, cfg.clip_norm);
            adam_step(&mut params, &grads, &mut state);
            if !params.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b + 1,
                    loss: f64::NAN,
                });
            }
            loss_sum += loss;
        }
        let row = EpochLog {
            epoch,
            loss: loss_sum / batches.len() as f64,
            seconds: started.elapsed().as_secs_f64(),
            peak_attn_bytes,
        };
        on_epoch(&row);
        log.push(row);
    }
    Ok(Trained { params, log })
}

/// Pick `count` distinct elements; used for validation-user sampling.
pub(crate) fn sample_distinct<T: Copy>(items: &[T], count: usize, rng: &mut impl Rng) -> Vec<T> {
    items.choose_multiple(rng, count.min(items.len())).copied().collect()
}
