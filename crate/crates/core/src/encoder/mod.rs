//! Bidirectional transformer encoder for masked item prediction.
//!
//! Token ids: `0` is padding, `1..=|V|` are items, `|V|+1` is the mask
//! token. Blocks are post-norm; the output head is a separate `d×(|V|+2)`
//! projection with bias.

mod block;
mod checkpoint;
mod model;
mod params;

pub use block::{block_backward, block_forward, layer_norm, layer_norm_backward, BlockCache, LayerNormCache};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint};
pub use model::{
    embed, key_mask, model_backward, model_forward, prediction_scores, score_last_positions,
    ForwardCache, Mode, SequenceInput,
};
pub use params::{truncated_normal, EncoderParams, LayerParams, ModelConfig, PAD};
