//! Percentage comparison of a variant mechanism against baselines.
//!
//! Every delta is `(variant − baseline) / baseline · 100`, so a variant that
//! uses less memory than its baseline shows a negative `MB(%)`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::attention::Mechanism;
use crate::bench::{summarize, BenchRecord};
use crate::error::{data_err, usage_err, Result};
use crate::eval::EVAL_CSV_HEADER;

pub fn percent_delta(baseline: f64, variant: f64) -> f64 {
    (variant - baseline) / baseline * 100.0
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub dataset: String,
    pub mechanism: Mechanism,
    pub seq_len: usize,
    pub d: usize,
    pub seed: u64,
    pub ndcg: f64,
    pub hit: f64,
    pub users: usize,
}

pub fn format_eval_row(r: &EvalRow) -> String {
    format!(
        "{},{},{},{},{},{:.6},{:.6},{}",
        r.dataset, r.mechanism, r.seq_len, r.d, r.seed, r.ndcg, r.hit, r.users
    )
}

pub fn parse_eval_csv(text: &str) -> Result<Vec<EvalRow>> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    if lines.next() != Some(EVAL_CSV_HEADER) {
        return Err(data_err!("eval CSV: expected header `{EVAL_CSV_HEADER}`"));
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(data_err!("eval CSV: malformed row {line:?}"));
            }
            let bad = |what: &str| data_err!("eval CSV: bad {what} in {line:?}");
            Ok(EvalRow {
                dataset: f[0].to_string(),
                mechanism: f[1].parse().map_err(|_| bad("mechanism"))?,
                seq_len: f[2].parse().map_err(|_| bad("seq_len"))?,
                d: f[3].parse().map_err(|_| bad("d"))?,
                seed: f[4].parse().map_err(|_| bad("seed"))?,
                ndcg: f[5].parse().map_err(|_| bad("ndcg"))?,
                hit: f[6].parse().map_err(|_| bad("hit"))?,
                users: f[7].parse().map_err(|_| bad("users"))?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub baseline: Mechanism,
    pub variant: Mechanism,
    pub dataset: String,
    pub seq_len: usize,
    pub d: usize,
    pub mb: Option<f64>,
    pub time: Option<f64>,
    pub ndcg: Option<f64>,
    pub hit: Option<f64>,
}

pub const REPORT_CSV_HEADER: &str = "baseline,variant,dataset,seq_len,d,MB(%),Time(%),NDCG(%),HIT(%)";

#[derive(Default)]
struct Cell {
    bytes: Option<f64>,
    seconds: Option<f64>,
    ndcg: Option<f64>,
    hit: Option<f64>,
}

/// One row per `(baseline, dataset, n, d)` where both mechanisms have data.
/// Bench groups use max bytes and min seconds over all reps; eval metrics
/// are averaged over seeds.
pub fn build_report(
    bench: &[BenchRecord],
    eval: &[EvalRow],
    variant: Mechanism,
    baselines: &[Mechanism],
) -> Result<Vec<ReportRow>> {
    if bench.is_empty() && eval.is_empty() {
        return Err(usage_err!("report needs at least one bench or eval row"));
    }
    let mut cells: BTreeMap<(String, usize, usize, Mechanism), Cell> = BTreeMap::new();
    let datasets: Vec<String> = {
        let mut d: Vec<String> = eval.iter().map(|r| r.dataset.clone()).collect();
        d.sort();
        d.dedup();
        if d.is_empty() {
            vec!["-".to_string()]
        } else {
            d
        }
    };
    let bench_groups = crate::bench::group(bench.iter(), |r| (r.n, r.d, r.mechanism));
    for ((n, d, mech), recs) in &bench_groups {
        let (b, s) = summarize(recs);
        for ds in &datasets {
            let c = cells.entry((ds.clone(), *n, *d, *mech)).or_default();
            c.bytes = Some(b as f64);
            c.seconds = Some(s);
        }
    }
    let mut eval_groups: BTreeMap<(String, usize, usize, Mechanism), Vec<&EvalRow>> = BTreeMap::new();
    for r in eval {
        eval_groups
            .entry((r.dataset.clone(), r.seq_len, r.d, r.mechanism))
            .or_default()
            .push(r);
    }
    for (key, rows) in eval_groups {
        let k = rows.len() as f64;
        let c = cells.entry(key).or_default();
        c.ndcg = Some(rows.iter().map(|r| r.ndcg).sum::<f64>() / k);
        c.hit = Some(rows.iter().map(|r| r.hit).sum::<f64>() / k);
    }

    let delta = |b: Option<f64>, v: Option<f64>| match (b, v) {
        (Some(b), Some(v)) if b != 0.0 => Some(percent_delta(b, v)),
        _ => None,
    };
    let mut rows = Vec::new();
    for &base in baselines {
        if base == variant {
            continue;
        }
        for ((ds, n, d, mech), v) in &cells {
            if *mech != variant {
                continue;
            }
            let Some(b) = cells.get(&(ds.clone(), *n, *d, base)) else {
                continue;
            };
            rows.push(ReportRow {
                baseline: base,
                variant,
                dataset: ds.clone(),
                seq_len: *n,
                d: *d,
                mb: delta(b.bytes, v.bytes),
                time: delta(b.seconds, v.seconds),
                ndcg: delta(b.ndcg, v.ndcg),
                hit: delta(b.hit, v.hit),
            });
        }
    }
    if rows.is_empty() {
        return Err(usage_err!("no (n, d) point has both {variant} and a baseline"));
    }
    Ok(rows)
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.2}%"))
}

pub fn format_report_csv(rows: &[ReportRow], echo: &[(String, String)]) -> String {
    let mut s = String::new();
    for (k, v) in echo {
        let _ = writeln!(s, "# {k}={v}");
    }
    let _ = writeln!(s, "# deltas are (variant - baseline) / baseline * 100");
    let _ = writeln!(s, "# MB compares peak transient attention bytes, not whole-process memory");
    let _ = writeln!(s, "{REPORT_CSV_HEADER}");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.baseline,
            r.variant,
            r.dataset,
            r.seq_len,
            r.d,
            pct(r.mb),
            pct(r.time),
            pct(r.ndcg),
            pct(r.hit)
        );
    }
    s
}
