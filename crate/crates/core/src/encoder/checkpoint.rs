//! Checkpoint format: a UTF-8 manifest terminated by a line `end`, followed by
//! every tensor as little-endian `f64`, concatenated in manifest order.
//!
//! ```text
//! COSREC-CHECKPOINT v1
//! config vocab_size=3706
//! ...
//! echo seed=42
//! tensor item_embeddings 3708 64 0
//! ...
//! end
//! ```
//!
//! The `offset` column counts `f64` values from the start of the blob.
//! Loading reproduces every parameter bit for bit.

use std::fs;
use std::path::Path;

use super::params::{EncoderParams, ModelConfig};
use crate::attention::{AttentionConfig, AttentionParams};
use crate::error::{data_err, Error, Result};
use crate::linalg::Matrix;

const MAGIC: &str = "COSREC-CHECKPOINT v1";

/// A loaded checkpoint: model configuration, parameters and the free-form
/// `echo` lines saved alongside them.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: EncoderParams,
    pub echo: Vec<(String, String)>,
}

fn config_lines(cfg: &ModelConfig) -> Vec<(&'static str, String)> {
    let a = &cfg.attention;
    vec![
        ("vocab_size", cfg.vocab_size.to_string()),
        ("dim", cfg.dim.to_string()),
        ("layers", cfg.layers.to_string()),
        ("max_len", cfg.max_len.to_string()),
        ("dropout", format!("{:e}", cfg.dropout)),
        ("ln_eps", format!("{:e}", cfg.ln_eps)),
        ("mechanism", a.mechanism.to_string()),
        ("eps", format!("{:e}", a.eps)),
        ("alpha", format!("{:e}", a.alpha)),
        ("tile_size", a.tile_size.to_string()),
        ("heads", a.heads.to_string()),
        ("elu_denominator", a.elu_denominator.to_string()),
    ]
}

pub fn encode_checkpoint(
    cfg: &ModelConfig,
    params: &EncoderParams,
    echo: &[(String, String)],
) -> Vec<u8> {
    let mut manifest = format!("{MAGIC}\n");
    for (k, v) in config_lines(cfg) {
        manifest.push_str(&format!("config {k}={v}\n"));
    }
    for (k, v) in echo {
        manifest.push_str(&format!("echo {k}={}\n", v.replace('\n', " ")));
    }
    let entries = params.entries();
    let mut offset = 0usize;
    for (name, (r, c), data) in &entries {
        manifest.push_str(&format!("tensor {name} {r} {c} {offset}\n"));
        offset += data.len();
    }
    manifest.push_str("end\n");
    let mut bytes = manifest.into_bytes();
    bytes.reserve(offset * 8);
    for (_, _, data) in &entries {
        for x in data.iter() {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    bytes
}

pub fn save_checkpoint(
    path: &Path,
    cfg: &ModelConfig,
    params: &EncoderParams,
    echo: &[(String, String)],
) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, encode_checkpoint(cfg, params, echo)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| data_err!("checkpoint: bad value {value:?} for {key}"))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    const TERMINATOR: &[u8] = b"\nend\n";
    let split = bytes
        .windows(TERMINATOR.len())
        .position(|w| w == TERMINATOR)
        .ok_or_else(|| data_err!("checkpoint: missing manifest terminator"))?;
    let manifest = std::str::from_utf8(&bytes[..split])
        .map_err(|_| data_err!("checkpoint: manifest is not UTF-8"))?;
    let blob = &bytes[split + TERMINATOR.len()..];
    if !blob.len().is_multiple_of(8) {
        return Err(data_err!("checkpoint: tensor blob length {} is not a multiple of 8", blob.len()));
    }
    let values: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();

    let mut lines = manifest.lines();
    if lines.next() != Some(MAGIC) {
        return Err(data_err!("checkpoint: unrecognized header"));
    }
    let mut config = std::collections::BTreeMap::new();
    let mut echo = Vec::new();
    let mut tensors = Vec::new();
    for line in lines {
        let (kind, rest) = line.split_once(' ').unwrap_or((line, ""));
        match kind {
            "config" | "echo" => {
                let (k, v) = rest
                    .split_once('=')
                    .ok_or_else(|| data_err!("checkpoint: malformed line {line:?}"))?;
                if kind == "config" {
                    config.insert(k.to_string(), v.to_string());
                } else {
                    echo.push((k.to_string(), v.to_string()));
                }
            }
            "tensor" => {
                let f: Vec<&str> = rest.split(' ').collect();
                if f.len() != 4 {
                    return Err(data_err!("checkpoint: malformed line {line:?}"));
                }
                let r: usize = parse("rows", f[1])?;
                let c: usize = parse("cols", f[2])?;
                let off: usize = parse("offset", f[3])?;
                let end = off
                    .checked_add(r * c)
                    .filter(|&e| e <= values.len())
                    .ok_or_else(|| data_err!("checkpoint: tensor {} overruns the blob", f[0]))?;
                tensors.push((f[0].to_string(), (r, c), values[off..end].to_vec()));
            }
            _ => return Err(data_err!("checkpoint: unknown line {line:?}")),
        }
    }
    let get = |k: &str| {
        config
            .get(k)
            .map(String::as_str)
            .ok_or_else(|| data_err!("checkpoint: missing config {k}"))
    };
    let attention = AttentionConfig {
        mechanism: parse("mechanism", get("mechanism")?)?,
        eps: parse("eps", get("eps")?)?,
        alpha: parse("alpha", get("alpha")?)?,
        tile_size: parse("tile_size", get("tile_size")?)?,
        heads: parse("heads", get("heads")?)?,
        elu_denominator: parse("elu_denominator", get("elu_denominator")?)?,
    };
    let cfg = ModelConfig {
        vocab_size: parse("vocab_size", get("vocab_size")?)?,
        dim: parse("dim", get("dim")?)?,
        layers: parse("layers", get("layers")?)?,
        max_len: parse("max_len", get("max_len")?)?,
        dropout: parse("dropout", get("dropout")?)?,
        ln_eps: parse("ln_eps", get("ln_eps")?)?,
        attention,
    };
    cfg.validate().map_err(|e| data_err!("checkpoint: {e}"))?;

    let mut params = skeleton(&cfg);
    let expected = params.entries();
    if expected.len() != tensors.len() {
        return Err(data_err!(
            "checkpoint: {} tensors for a model with {}",
            tensors.len(),
            expected.len()
        ));
    }
    for ((name, shape, _), (got_name, got_shape, _)) in expected.iter().zip(&tensors) {
        if name != got_name || *shape != *got_shape {
            return Err(data_err!(
                "checkpoint: expected tensor {name} {shape:?}, found {got_name} {got_shape:?}"
            ));
        }
    }
    for (slot, (_, _, data)) in params.slices_mut().into_iter().zip(tensors) {
        slot.copy_from_slice(&data);
    }
    Ok(Checkpoint {
        config: cfg,
        params,
        echo,
    })
}

/// Zero-filled parameters with the layout `cfg` implies.
fn skeleton(cfg: &ModelConfig) -> EncoderParams {
    let d = cfg.dim;
    let h = cfg.attention.heads;
    let attn = AttentionParams::identity(d, h);
    let layer = super::params::LayerParams {
        attn: attn.zeros_like(),
        w1: Matrix::zeros(d, cfg.ffn_dim()),
        b1: Matrix::zeros(1, cfg.ffn_dim()),
        w2: Matrix::zeros(cfg.ffn_dim(), d),
        b2: Matrix::zeros(1, d),
        ln1_gain: Matrix::zeros(1, d),
        ln1_bias: Matrix::zeros(1, d),
        ln2_gain: Matrix::zeros(1, d),
        ln2_bias: Matrix::zeros(1, d),
    };
    EncoderParams {
        item_embeddings: Matrix::zeros(cfg.token_count(), d),
        position_embeddings: Matrix::zeros(cfg.max_len, d),
        layers: vec![layer; cfg.layers],
        head_w: Matrix::zeros(d, cfg.token_count()),
        head_b: Matrix::zeros(1, cfg.token_count()),
    }
}
