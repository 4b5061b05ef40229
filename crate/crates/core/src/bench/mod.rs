//! Transient-memory and wall-time measurement of the attention kernels.
//!
//! "Peak bytes" is the high-water mark of heap bytes allocated by one
//! forward call beyond its inputs and the caller-owned output buffer. The
//! count comes from [`alloc::TrackingAllocator`] and needs the `track-alloc`
//! feature; without it every measurement reads zero.

pub mod alloc;
mod plot;

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use plot::{line_plot_svg, sweep_plots, Series};

use crate::attention::{
    cosine_attention_fused_into, elu_linear_attention_into, softmax_attention_into, AttentionConfig,
    Mechanism,
};
use crate::error::{data_err, usage_err, Result};
use crate::linalg::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRecord {
    pub mechanism: Mechanism,
    pub n: usize,
    pub d: usize,
    pub tile: usize,
    pub rep: usize,
    pub peak_bytes: usize,
    pub seconds: f64,
}

pub const BENCH_CSV_HEADER: &str = "mechanism,n,d,T,rep,peak_bytes,seconds";

/// Seeded `n×d` inputs drawn uniformly from `[-1, 1)`.
pub fn random_qkv(n: usize, d: usize, seed: u64) -> (Matrix, Matrix, Matrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || Matrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
    (draw(), draw(), draw())
}

/// One inference forward into `out`; the cosine exponent is fixed at 1.
pub fn run_kernel(cfg: &AttentionConfig, q: &Matrix, k: &Matrix, v: &Matrix, out: &mut Matrix) -> Result<()> {
    match cfg.mechanism {
        Mechanism::Softmax => softmax_attention_into(q, k, v, None, out),
        Mechanism::EluLinear => elu_linear_attention_into(q, k, v, cfg, None, out),
        Mechanism::Cosine => cosine_attention_fused_into(q, k, v, 1.0, cfg, None, out),
    }
}

/// Measured transient bytes of a single forward at `(n, d)`.
pub fn attention_transient_bytes(cfg: &AttentionConfig, n: usize, d: usize) -> Result<usize> {
    let (q, k, v) = random_qkv(n, d, 0);
    let mut out = Matrix::zeros(n, d);
    let (res, stats) = alloc::measure(|| run_kernel(cfg, &q, &k, &v, &mut out));
    res?;
    Ok(stats.peak_bytes)
}

/// One warm-up call, then `reps` timed and tracked calls on seeded inputs.
pub fn tracked_run(cfg: &AttentionConfig, n: usize, d: usize, reps: usize, seed: u64) -> Result<Vec<BenchRecord>> {
    if n == 0 || d == 0 {
        return Err(usage_err!("benchmark sizes must be positive"));
    }
    if reps < 3 {
        return Err(usage_err!("need at least 3 repetitions, got {reps}"));
    }
    cfg.validate(d)?;
    let (q, k, v) = random_qkv(n, d, seed);
    let mut out = Matrix::zeros(n, d);
    run_kernel(cfg, &q, &k, &v, &mut out)?;
    let mut records = Vec::with_capacity(reps);
    for rep in 0..reps {
        let (res, stats) = alloc::measure(|| {
            let start = Instant::now();
            let r = run_kernel(cfg, &q, &k, &v, &mut out);
            (r, start.elapsed().as_secs_f64())
        });
        let (r, seconds) = res;
        r?;
        std::hint::black_box(&out);
        records.push(BenchRecord {
            mechanism: cfg.mechanism,
            n,
            d,
            tile: cfg.tile_size,
            rep,
            peak_bytes: stats.peak_bytes,
            seconds: seconds.max(f64::MIN_POSITIVE),
        });
    }
    Ok(records)
}

/// `(max peak bytes, min seconds)` over a group of repetitions.
pub fn summarize(records: &[BenchRecord]) -> (usize, f64) {
    let bytes = records.iter().map(|r| r.peak_bytes).max().unwrap_or(0);
    let secs = records.iter().map(|r| r.seconds).fold(f64::INFINITY, f64::min);
    (bytes, secs)
}

/// Closed-form transient bytes: softmax `(n² + n·d)·8`, ELU-linear
/// `(2·n·d + d² + n)·8`, cosine `(min(T, n)·d + d²)·8`.
pub fn theoretical_bytes(mechanism: Mechanism, n: usize, d: usize, tile: usize) -> usize {
    8 * match mechanism {
        Mechanism::Softmax => n * n + n * d,
        Mechanism::EluLinear => 2 * n * d + d * d + n,
        Mechanism::Cosine => tile.min(n) * d + d * d,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares line through `(ln x, ln y)`.
pub fn fit_loglog_slope(xs: &[f64], ys: &[f64]) -> Result<ScalingFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(usage_err!("need at least two paired points, got {} and {}", xs.len(), ys.len()));
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(usage_err!("log-log fit needs positive finite values"));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(usage_err!("log-log fit needs at least two distinct x values"));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - (intercept + slope * x)).powi(2))
        .sum();
    let r_squared = if ss_tot <= f64::EPSILON * n { 1.0 } else { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) };
    Ok(ScalingFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Which measurement a fit or plot uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Bytes,
    Seconds,
}

/// Fit `metric` against `n` for one mechanism at one `d`, using the
/// group summary (max bytes, min seconds) of each `n`.
pub fn fit_records(records: &[BenchRecord], mechanism: Mechanism, d: usize, metric: Metric) -> Result<ScalingFit> {
    let groups = group(records.iter().filter(|r| r.mechanism == mechanism && r.d == d), |r| r.n);
    let xs: Vec<f64> = groups.keys().map(|&n| n as f64).collect();
    let ys: Vec<f64> = groups
        .values()
        .map(|g| {
            let (b, s) = summarize(g);
            match metric {
                Metric::Bytes => b as f64,
                Metric::Seconds => s,
            }
        })
        .collect();
    fit_loglog_slope(&xs, &ys)
}

pub(crate) fn group<'a, K: Ord>(
    records: impl Iterator<Item = &'a BenchRecord>,
    key: impl Fn(&BenchRecord) -> K,
) -> BTreeMap<K, Vec<BenchRecord>> {
    let mut out: BTreeMap<K, Vec<BenchRecord>> = BTreeMap::new();
    for r in records {
        out.entry(key(r)).or_default().push(r.clone());
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub mechanisms: Vec<Mechanism>,
    pub ns: Vec<usize>,
    pub ds: Vec<usize>,
    pub seeds: Vec<u64>,
    pub reps: usize,
    pub attention: AttentionConfig,
}

impl SweepConfig {
    pub fn new(ns: Vec<usize>, ds: Vec<usize>) -> Self {
        Self {
            mechanisms: Mechanism::ALL.to_vec(),
            ns,
            ds,
            seeds: vec![0, 42, 123],
            reps: 3,
            attention: AttentionConfig::default(),
        }
    }
}

/// Full factorial mechanisms × n × d × seeds. Within one `(mechanism, n, d)`
/// group the record `rep` is `seed_index · reps + r`.
pub fn sweep(cfg: &SweepConfig) -> Result<Vec<BenchRecord>> {
    if cfg.mechanisms.is_empty() || cfg.ns.is_empty() || cfg.ds.is_empty() || cfg.seeds.is_empty() {
        return Err(usage_err!("sweep needs at least one mechanism, n, d and seed"));
    }
    let mut out = Vec::new();
    for &mech in &cfg.mechanisms {
        let attn = AttentionConfig {
            mechanism: mech,
            ..cfg.attention.clone()
        };
        for &n in &cfg.ns {
            for &d in &cfg.ds {
                for (si, &seed) in cfg.seeds.iter().enumerate() {
                    for mut r in tracked_run(&attn, n, d, cfg.reps, seed)? {
                        r.rep += si * cfg.reps;
                        out.push(r);
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn format_bench_csv(records: &[BenchRecord], echo: &[(String, String)]) -> String {
    let mut s = String::new();
    for (k, v) in echo {
        s.push_str(&format!("# {k}={v}\n"));
    }
    s.push_str(BENCH_CSV_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&format!(
            "{},{},{},{},{},{},{:.6e}\n",
            r.mechanism, r.n, r.d, r.tile, r.rep, r.peak_bytes, r.seconds
        ));
    }
    s
}

pub fn parse_bench_csv(text: &str) -> Result<Vec<BenchRecord>> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    if lines.next() != Some(BENCH_CSV_HEADER) {
        return Err(data_err!("bench CSV: expected header `{BENCH_CSV_HEADER}`"));
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(data_err!("bench CSV: malformed row {line:?}"));
            }
            let num = |s: &str| s.parse::<usize>().map_err(|_| data_err!("bench CSV: bad integer {s:?}"));
            Ok(BenchRecord {
                mechanism: f[0].parse().map_err(|_| data_err!("bench CSV: bad mechanism {:?}", f[0]))?,
                n: num(f[1])?,
                d: num(f[2])?,
                tile: num(f[3])?,
                rep: num(f[4])?,
                peak_bytes: num(f[5])?,
                seconds: f[6].parse().map_err(|_| data_err!("bench CSV: bad seconds {:?}", f[6]))?,
            })
        })
        .collect()
}
