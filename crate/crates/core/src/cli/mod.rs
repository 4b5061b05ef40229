//! Command-line front end: `preprocess`, `synth`, `train`, `eval`, `bench`
//! and `report`.
//!
//! Settings resolve in this order, later wins: built-in defaults, the
//! `key=value` file given by `--config`, the `COSREC_OUT` environment
//! variable (output directory only), command-line flags. Config keys are
//! the long flag names without the leading dashes.

mod commands;

use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{cmd_bench, cmd_eval, cmd_preprocess, cmd_report, cmd_synth, cmd_train};

use crate::attention::{AttentionConfig, Mechanism};
use crate::data::{Format, Preset};
use crate::encoder::ModelConfig;
use crate::error::{usage_err, Error, Result};
use crate::eval::TieRule;
use crate::training::{MaskOptions, TrainConfig};

/// Every setting any command reads.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub format: Format,
    pub preset: Option<Preset>,
    pub mechanism: Mechanism,
    pub seq_len: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub mask_prob: f64,
    pub bert_corruption: bool,
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub clip: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub tile: usize,
    pub eps: f64,
    pub alpha: f64,
    pub out: PathBuf,
    pub threads: usize,
    pub min_inter: usize,
    pub max_inter: Option<usize>,
    pub valid_users: Option<usize>,
    pub dedup: bool,
    pub checkpoint: Option<PathBuf>,
    pub split: String,
    pub name: Option<String>,
    pub tie_rule: TieRule,
    pub exclude_history: bool,
    pub ns: Vec<usize>,
    pub ds: Vec<usize>,
    pub seeds: Vec<u64>,
    pub reps: usize,
    pub mechanisms: Vec<Mechanism>,
    pub bench: Option<PathBuf>,
    pub eval: Vec<PathBuf>,
    pub variant: Mechanism,
    pub baselines: Vec<Mechanism>,
    pub users: usize,
    pub vocab: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            format: Format::MovielensDat,
            preset: None,
            mechanism: Mechanism::Cosine,
            seq_len: 50,
            dim: 64,
            layers: 2,
            heads: 2,
            mask_prob: 0.15,
            bert_corruption: false,
            lr: 0.001,
            weight_decay: 0.001,
            dropout: 0.1,
            clip: 1.0,
            batch: 128,
            epochs: 20,
            seed: 0,
            tile: 32,
            eps: 1e-6,
            alpha: 1.0,
            out: PathBuf::from("out"),
            threads: 1,
            min_inter: 3,
            max_inter: None,
            valid_users: None,
            dedup: false,
            checkpoint: None,
            split: "test".into(),
            name: None,
            tie_rule: TieRule::TargetWins,
            exclude_history: false,
            ns: vec![64, 128, 256, 512, 1024],
            ds: vec![64],
            seeds: vec![0, 42, 123],
            reps: 3,
            mechanisms: Mechanism::ALL.to_vec(),
            bench: None,
            eval: Vec::new(),
            variant: Mechanism::Cosine,
            baselines: vec![Mechanism::Softmax, Mechanism::EluLinear],
            users: 500,
            vocab: 50,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| usage_err!("invalid value {value:?} for {key}"))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

fn parse_mechanisms(key: &str, value: &str) -> Result<Vec<Mechanism>> {
    if value.trim() == "all" {
        return Ok(Mechanism::ALL.to_vec());
    }
    value.split(',').map(|s| s.trim().parse::<Mechanism>()).collect::<Result<_>>().map_err(|e| match e {
        Error::Usage(m) => usage_err!("{key}: {m}"),
        other => other,
    })
}

impl RunConfig {
    /// Apply one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "dataset" => self.dataset = Some(PathBuf::from(v)),
            "format" => self.format = v.parse()?,
            "preset" => self.preset = Some(v.parse()?),
            "mechanism" => {
                self.mechanisms = parse_mechanisms(key, v)?;
                self.mechanism = self.mechanisms[0];
            }
            "seq-len" => self.seq_len = parse_value(key, v)?,
            "dim" => self.dim = parse_value(key, v)?,
            "layers" => self.layers = parse_value(key, v)?,
            "heads" => self.heads = parse_value(key, v)?,
            "mask-prob" => self.mask_prob = parse_value(key, v)?,
            "bert-corruption" => self.bert_corruption = parse_value(key, v)?,
            "lr" => self.lr = parse_value(key, v)?,
            "weight-decay" => self.weight_decay = parse_value(key, v)?,
            "dropout" => self.dropout = parse_value(key, v)?,
            "clip" => self.clip = parse_value(key, v)?,
            "batch" => self.batch = parse_value(key, v)?,
            "epochs" => self.epochs = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            "tile" => self.tile = parse_value(key, v)?,
            "eps" => self.eps = parse_value(key, v)?,
            "alpha" => self.alpha = parse_value(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "threads" => self.threads = parse_value(key, v)?,
            "min-inter" => self.min_inter = parse_value(key, v)?,
            "max-inter" => self.max_inter = Some(parse_value(key, v)?),
            "valid-users" => self.valid_users = Some(parse_value(key, v)?),
            "dedup" => self.dedup = parse_value(key, v)?,
            "checkpoint" => self.checkpoint = Some(PathBuf::from(v)),
            "split" => {
                if v != "test" && v != "valid" {
                    return Err(usage_err!("split must be test or valid, got {v:?}"));
                }
                self.split = v.to_string();
            }
            "name" => self.name = Some(v.to_string()),
            "tie-rule" => self.tie_rule = v.parse()?,
            "exclude-history" => self.exclude_history = parse_value(key, v)?,
            "ns" => self.ns = parse_list(key, v)?,
            "ds" => self.ds = parse_list(key, v)?,
            "seeds" => self.seeds = parse_list(key, v)?,
            "reps" => self.reps = parse_value(key, v)?,
            "bench" => self.bench = Some(PathBuf::from(v)),
            "eval" => self.eval = v.split(',').map(|s| PathBuf::from(s.trim())).collect(),
            "variant" => self.variant = v.parse()?,
            "baselines" => self.baselines = parse_mechanisms(key, v)?,
            "users" => self.users = parse_value(key, v)?,
            "vocab" => self.vocab = parse_value(key, v)?,
            other => return Err(usage_err!("unknown setting {other:?}")),
        }
        Ok(())
    }

    /// Apply a flat `key=value` file; `#` starts a comment line.
    pub fn apply_file(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| usage_err!("config line {}: expected key=value, got {line:?}", i + 1))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.threads > 1024 {
            return Err(usage_err!("--threads {} is unreasonable", self.threads));
        }
        if self.seq_len == 0 || self.batch == 0 || self.epochs == 0 || self.reps == 0 {
            return Err(usage_err!("seq-len, batch, epochs and reps must be positive"));
        }
        if self.ns.is_empty() || self.ds.is_empty() || self.seeds.is_empty() {
            return Err(usage_err!("ns, ds and seeds must be non-empty"));
        }
        self.model_config(1)?.validate()?;
        self.train_config(1)?.validate()
    }

    pub fn attention(&self) -> AttentionConfig {
        AttentionConfig {
            mechanism: self.mechanism,
            eps: self.eps,
            alpha: self.alpha,
            tile_size: self.tile,
            heads: self.heads,
            elu_denominator: true,
        }
    }

    pub fn model_config(&self, vocab_size: usize) -> Result<ModelConfig> {
        let mut m = ModelConfig::new(vocab_size, self.dim, self.seq_len, self.attention());
        m.layers = self.layers;
        m.dropout = self.dropout;
        Ok(m)
    }

    pub fn train_config(&self, vocab_size: usize) -> Result<TrainConfig> {
        let mut t = TrainConfig::new(self.model_config(vocab_size)?);
        t.mask = MaskOptions {
            bert_corruption: self.bert_corruption,
            ..MaskOptions::new(self.mask_prob, vocab_size)
        };
        t.lr = self.lr;
        t.weight_decay = self.weight_decay;
        t.clip_norm = self.clip;
        t.batch_size = self.batch;
        t.epochs = self.epochs;
        t.seed = self.seed;
        Ok(t)
    }

    /// Settings echoed into artifact headers. The output directory and
    /// thread count are left out: neither changes any result.
    pub fn echo(&self, command: &str) -> Vec<(String, String)> {
        let path = |p: &Option<PathBuf>| p.as_ref().map_or_else(|| "-".to_string(), |p| p.display().to_string());
        let join = |v: Vec<String>| v.join(",");
        vec![
            ("command".into(), command.into()),
            ("dataset".into(), path(&self.dataset)),
            ("format".into(), self.format.to_string()),
            ("mechanism".into(), join(self.mechanisms.iter().map(|m| m.to_string()).collect())),
            ("seq-len".into(), self.seq_len.to_string()),
            ("dim".into(), self.dim.to_string()),
            ("layers".into(), self.layers.to_string()),
            ("heads".into(), self.heads.to_string()),
            ("mask-prob".into(), self.mask_prob.to_string()),
            ("bert-corruption".into(), self.bert_corruption.to_string()),
            ("lr".into(), self.lr.to_string()),
            ("weight-decay".into(), self.weight_decay.to_string()),
            ("dropout".into(), self.dropout.to_string()),
            ("clip".into(), self.clip.to_string()),
            ("batch".into(), self.batch.to_string()),
            ("epochs".into(), self.epochs.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("tile".into(), self.tile.to_string()),
            ("eps".into(), self.eps.to_string()),
            ("alpha".into(), self.alpha.to_string()),
            ("tie-rule".into(), self.tie_rule.to_string()),
            ("exclude-history".into(), self.exclude_history.to_string()),
        ]
    }
}

#[derive(Parser, Debug)]
#[command(name = "cosrec", version, about = "Sequential recommendation with softmax, ELU-linear and cosine attention")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Parse a raw interaction log and write the canonical dataset file.
    Preprocess(Flags),
    /// Write a planted-pattern dataset (every sequence a rotation of 1..=vocab).
    Synth(Flags),
    /// Train a model; writes checkpoint.bin and train_log.csv.
    Train(Flags),
    /// Evaluate a checkpoint with leave-one-out ranking; writes eval.csv.
    Eval(Flags),
    /// Memory and runtime sweep of the attention kernels; writes bench.csv and SVG plots.
    Bench(Flags),
    /// Percentage deltas of a variant against baselines; writes report.csv.
    Report(Flags),
}

macro_rules! flags {
    ($($field:ident => $key:literal: $help:literal),* $(,)?) => {
        #[derive(Args, Debug, Default)]
        pub struct Flags {
            /// Flat key=value file applied before flags.
            #[arg(long)]
            pub config: Option<PathBuf>,
            $(
                #[doc = $help]
                #[arg(long = $key)]
                pub $field: Option<String>,
            )*
        }

        impl Flags {
            fn pairs(&self) -> Vec<(&'static str, &str)> {
                let mut out = Vec::new();
                $(
                    if let Some(v) = &self.$field {
                        out.push(($key, v.as_str()));
                    }
                )*
                out
            }
        }
    };
}

flags! {
    dataset => "dataset": "Input file: raw log (preprocess) or canonical dataset (train, eval)",
    format => "format": "Raw log format: movielens_dat | amazon_csv | tsv",
    preset => "preset": "Filtering preset: ml-1m | ml-20m | beauty",
    mechanism => "mechanism": "softmax | elu_linear | cosine (bench also takes a comma list or `all`)",
    seq_len => "seq-len": "Sequence length n",
    dim => "dim": "Model dimension d",
    layers => "layers": "Transformer layers",
    heads => "heads": "Attention heads",
    mask_prob => "mask-prob": "Masking probability during training",
    bert_corruption => "bert-corruption": "Use 80/10/10 mask/random/keep corruption (true|false)",
    lr => "lr": "Learning rate",
    weight_decay => "weight-decay": "Decoupled weight decay",
    dropout => "dropout": "Dropout rate",
    clip => "clip": "Global gradient-norm clip",
    batch => "batch": "Batch size",
    epochs => "epochs": "Training epochs",
    seed => "seed": "Random seed",
    tile => "tile": "Cosine kernel tile size T",
    eps => "eps": "Normalization epsilon",
    alpha => "alpha": "ELU alpha",
    out => "out": "Output directory",
    threads => "threads": "Worker threads (default 1)",
    min_inter => "min-inter": "Minimum interactions per user",
    max_inter => "max-inter": "Maximum interactions per user",
    valid_users => "valid-users": "Number of users sampled for validation",
    dedup => "dedup": "Collapse consecutive repeats of an item (true|false)",
    checkpoint => "checkpoint": "Checkpoint to evaluate (default <out>/checkpoint.bin)",
    split => "split": "Evaluation split: test | valid",
    name => "name": "Dataset label in eval.csv (default: dataset file stem)",
    tie_rule => "tie-rule": "target_wins | target_loses",
    exclude_history => "exclude-history": "Drop already-seen items from ranking (true|false)",
    ns => "ns": "Bench sequence lengths, comma separated",
    ds => "ds": "Bench model dims, comma separated",
    seeds => "seeds": "Bench seeds, comma separated",
    reps => "reps": "Bench repetitions per seed (>= 3)",
    bench => "bench": "Bench CSV for report",
    eval => "eval": "Eval CSVs for report, comma separated",
    variant => "variant": "Report variant mechanism",
    baselines => "baselines": "Report baseline mechanisms, comma separated",
    users => "users": "Synthetic user count",
    vocab => "vocab": "Synthetic item count",
}

/// Resolve the full configuration for one invocation.
pub fn resolve(flags: &Flags) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &flags.config {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        cfg.apply_file(&text)?;
    }
    if let Ok(dir) = std::env::var("COSREC_OUT") {
        if !dir.is_empty() {
            cfg.out = PathBuf::from(dir);
        }
    }
    for (k, v) in flags.pairs() {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parse `args` (including the program name) and run the command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Ok(());
            }
            return Err(Error::Usage(e.to_string()));
        }
    };
    let (name, flags) = match &cli.command {
        Command::Preprocess(f) => ("preprocess", f),
        Command::Synth(f) => ("synth", f),
        Command::Train(f) => ("train", f),
        Command::Eval(f) => ("eval", f),
        Command::Bench(f) => ("bench", f),
        Command::Report(f) => ("report", f),
    };
    let cfg = resolve(flags)?;
    crate::parallel::with_threads(cfg.threads, || match name {
        "preprocess" => cmd_preprocess(&cfg),
        "synth" => cmd_synth(&cfg),
        "train" => cmd_train(&cfg),
        "eval" => cmd_eval(&cfg),
        "bench" => cmd_bench(&cfg),
        _ => cmd_report(&cfg),
    })
}
