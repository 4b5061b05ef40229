//! Leave-one-out next-item ranking over the full item vocabulary.

use std::fmt;
use std::str::FromStr;

use crate::data::{pad_left, Holdout};
use crate::encoder::{score_last_positions, EncoderParams, ModelConfig};
use crate::error::{usage_err, Error, Result};

/// How scores equal to the target's are counted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TieRule {
    /// Ties rank the target first (optimistic, deterministic).
    #[default]
    TargetWins,
    /// Every tied item ranks ahead of the target.
    TargetLoses,
}

impl fmt::Display for TieRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TieRule::TargetWins => "target_wins",
            TieRule::TargetLoses => "target_loses",
        })
    }
}

impl FromStr for TieRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "target_wins" => Ok(TieRule::TargetWins),
            "target_loses" => Ok(TieRule::TargetLoses),
            other => Err(usage_err!("unknown tie rule {other:?}")),
        }
    }
}

/// 1-based rank of `scores[target]` among all entries.
pub fn rank_of_target(scores: &[f64], target: usize) -> usize {
    rank_with_rule(scores, target, TieRule::TargetWins)
}

pub fn rank_with_rule(scores: &[f64], target: usize, rule: TieRule) -> usize {
    let t = scores[target];
    let ahead = scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| {
            j != target
                && match rule {
                    TieRule::TargetWins => s > t,
                    TieRule::TargetLoses => s >= t,
                }
        })
        .count();
    1 + ahead
}

pub fn ndcg_at_k(rank: usize, k: usize) -> f64 {
    if rank >= 1 && rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

pub fn hit_at_k(rank: usize, k: usize) -> f64 {
    if rank >= 1 && rank <= k {
        1.0
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub k: usize,
    pub seq_len: usize,
    pub tie_rule: TieRule,
    /// Drop items already in the context from the candidate set (except the target).
    pub exclude_history: bool,
    /// Users scored per forward call.
    pub batch_size: usize,
}

impl EvalConfig {
    pub fn new(seq_len: usize) -> Self {
        Self {
            k: 10,
            seq_len,
            tie_rule: TieRule::TargetWins,
            exclude_history: false,
            batch_size: 128,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub ndcg_at_k: f64,
    pub hit_at_k: f64,
    pub user_count: usize,
    pub k: usize,
}

/// Per-user ranks, in input order.
pub fn target_ranks(
    params: &EncoderParams,
    model: &ModelConfig,
    holdouts: &[Holdout],
    cfg: &EvalConfig,
) -> Result<Vec<usize>> {
    if cfg.seq_len == 0 || cfg.seq_len > model.max_len || cfg.batch_size == 0 || cfg.k == 0 {
        return Err(usage_err!(
            "evaluation needs 1 <= seq_len <= {} and positive k and batch size",
            model.max_len
        ));
    }
    let vocab = model.vocab_size;
    let mut ranks = Vec::with_capacity(holdouts.len());
    for chunk in holdouts.chunks(cfg.batch_size) {
        let inputs: Vec<Vec<u32>> = chunk
            .iter()
            .map(|h| {
                let mut ctx = h.context.clone();
                ctx.push(model.mask_token());
                pad_left(&ctx, cfg.seq_len)
            })
            .collect();
        for h in chunk {
            if h.target == 0 || h.target as usize > vocab {
                return Err(usage_err!("target {} is not a real item id", h.target));
            }
        }
        let logits = score_last_positions(&inputs, params, model)?;
        for (i, h) in chunk.iter().enumerate() {
            let mut scores = logits.row(i)[1..=vocab].to_vec();
            if scores.iter().any(|s| !s.is_finite()) {
                return Err(Error::Numeric(format!("non-finite score for user {}", h.user)));
            }
            if cfg.exclude_history {
                for &item in &h.context {
                    if item != h.target {
                        scores[item as usize - 1] = f64::NEG_INFINITY;
                    }
                }
            }
            ranks.push(rank_with_rule(&scores, h.target as usize - 1, cfg.tie_rule));
        }
    }
    Ok(ranks)
}

/// Average NDCG@k and HIT@k over every user (misses count as 0).
pub fn evaluate(
    params: &EncoderParams,
    model: &ModelConfig,
    holdouts: &[Holdout],
    cfg: &EvalConfig,
) -> Result<EvalResult> {
    if holdouts.is_empty() {
        return Err(usage_err!("no users to evaluate"));
    }
    let ranks = target_ranks(params, model, holdouts, cfg)?;
    let n = ranks.len() as f64;
    Ok(EvalResult {
        ndcg_at_k: ranks.iter().map(|&r| ndcg_at_k(r, cfg.k)).sum::<f64>() / n,
        hit_at_k: ranks.iter().map(|&r| hit_at_k(r, cfg.k)).sum::<f64>() / n,
        user_count: ranks.len(),
        k: cfg.k,
    })
}

pub const EVAL_CSV_HEADER: &str = "dataset,mechanism,seq_len,d,seed,ndcg@10,hit@10,users";
