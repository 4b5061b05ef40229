use rand::Rng;
use rand_distr::StandardNormal;

use crate::attention::{AttentionConfig, AttentionParams};
use crate::error::{usage_err, Result};
use crate::linalg::Matrix;

/// Reserved padding token.
pub const PAD: u32 = 0;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Number of real items `|V|`; token ids run `0..=|V|+1`.
    pub vocab_size: usize,
    pub dim: usize,
    pub layers: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub ln_eps: f64,
    pub attention: AttentionConfig,
}

impl ModelConfig {
    pub fn new(vocab_size: usize, dim: usize, max_len: usize, attention: AttentionConfig) -> Self {
        Self {
            vocab_size,
            dim,
            layers: 2,
            max_len,
            dropout: 0.1,
            ln_eps: 1e-5,
            attention,
        }
    }

    pub fn mask_token(&self) -> u32 {
        self.vocab_size as u32 + 1
    }

    /// Rows of the embedding table and columns of the output head.
    pub fn token_count(&self) -> usize {
        self.vocab_size + 2
    }

    pub fn ffn_dim(&self) -> usize {
        4 * self.dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.layers == 0 || self.dim == 0 || self.max_len == 0 {
            return Err(usage_err!(
                "vocab size, layers, dim and max length must all be positive"
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(usage_err!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        self.attention.validate(self.dim)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub attn: AttentionParams,
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
    pub ln1_gain: Matrix,
    pub ln1_bias: Matrix,
    pub ln2_gain: Matrix,
    pub ln2_bias: Matrix,
}

/// Every learnable tensor of the encoder. Gradients use the same type.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub item_embeddings: Matrix,
    pub position_embeddings: Matrix,
    pub layers: Vec<LayerParams>,
    pub head_w: Matrix,
    pub head_b: Matrix,
}

pub fn truncated_normal(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| loop {
        let x: f64 = rng.sample(StandardNormal);
        if x.abs() <= 2.0 {
            break x * std;
        }
    })
}

const INIT_STD: f64 = 0.02;

impl EncoderParams {
    pub fn init(cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let d = cfg.dim;
        let mut item_embeddings = truncated_normal(rng, cfg.token_count(), d, INIT_STD);
        item_embeddings.row_mut(PAD as usize).fill(0.0);
        let position_embeddings = truncated_normal(rng, cfg.max_len, d, INIT_STD);
        let layers = (0..cfg.layers)
            .map(|_| LayerParams {
                attn: AttentionParams::init(rng, d, cfg.attention.heads, INIT_STD),
                w1: truncated_normal(rng, d, cfg.ffn_dim(), INIT_STD),
                b1: Matrix::zeros(1, cfg.ffn_dim()),
                w2: truncated_normal(rng, cfg.ffn_dim(), d, INIT_STD),
                b2: Matrix::zeros(1, d),
                ln1_gain: Matrix::filled(1, d, 1.0),
                ln1_bias: Matrix::zeros(1, d),
                ln2_gain: Matrix::filled(1, d, 1.0),
                ln2_bias: Matrix::zeros(1, d),
            })
            .collect();
        Self {
            item_embeddings,
            position_embeddings,
            layers,
            head_w: truncated_normal(rng, d, cfg.token_count(), INIT_STD),
            head_b: Matrix::zeros(1, cfg.token_count()),
        }
    }

    /// Same structure, every entry zero (including the `m` exponents).
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for s in z.slices_mut() {
            s.fill(0.0);
        }
        z
    }

    pub fn dim(&self) -> usize {
        self.item_embeddings.cols()
    }

    /// `(name, (rows, cols), data)` for every tensor, in a fixed order.
    pub fn entries(&self) -> Vec<(String, (usize, usize), &[f64])> {
        let mut out: Vec<(String, (usize, usize), &[f64])> = Vec::new();
        out.push(("item_embeddings".into(), self.item_embeddings.shape(), self.item_embeddings.data()));
        out.push(("position_embeddings".into(), self.position_embeddings.shape(), self.position_embeddings.data()));
        for (l, layer) in self.layers.iter().enumerate() {
            let a = &layer.attn;
            for (kind, mats) in [("w_q", &a.w_q), ("w_k", &a.w_k), ("w_v", &a.w_v)] {
                for (h, m) in mats.iter().enumerate() {
                    out.push((format!("layers.{l}.attn.{kind}.{h}"), m.shape(), m.data()));
                }
            }
            out.push((format!("layers.{l}.attn.w_o"), a.w_o.shape(), a.w_o.data()));
            out.push((format!("layers.{l}.attn.m"), (1, 1), std::slice::from_ref(&a.m)));
            for (name, m) in layer.dense() {
                out.push((format!("layers.{l}.{name}"), m.shape(), m.data()));
            }
        }
        out.push(("head_w".into(), self.head_w.shape(), self.head_w.data()));
        out.push(("head_b".into(), self.head_b.shape(), self.head_b.data()));
        out
    }

    /// Mutable data slices in the same order as [`EncoderParams::entries`].
    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            self.item_embeddings.data_mut(),
            self.position_embeddings.data_mut(),
        ];
        for layer in &mut self.layers {
            let LayerParams {
                attn,
                w1,
                b1,
                w2,
                b2,
                ln1_gain,
                ln1_bias,
                ln2_gain,
                ln2_bias,
            } = layer;
            for mats in [&mut attn.w_q, &mut attn.w_k, &mut attn.w_v] {
                out.extend(mats.iter_mut().map(Matrix::data_mut));
            }
            out.push(attn.w_o.data_mut());
            out.push(std::slice::from_mut(&mut attn.m));
            for m in [w1, b1, w2, b2, ln1_gain, ln1_bias, ln2_gain, ln2_bias] {
                out.push(m.data_mut());
            }
        }
        out.push(self.head_w.data_mut());
        out.push(self.head_b.data_mut());
        out
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        self.entries().into_iter().map(|(_, _, s)| s).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &EncoderParams) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }
}

impl LayerParams {
    /// Dense (non-attention) tensors in checkpoint order.
    fn dense(&self) -> [(&'static str, &Matrix); 8] {
        [
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
            ("ln1_gain", &self.ln1_gain),
            ("ln1_bias", &self.ln1_bias),
            ("ln2_gain", &self.ln2_gain),
            ("ln2_bias", &self.ln2_bias),
        ]
    }
}
