use std::cell::RefCell;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use super::RunConfig;
use crate::bench::{format_bench_csv, parse_bench_csv, sweep, sweep_plots, SweepConfig};
use crate::data::{leave_one_out_split, load_interactions, preprocess, read_dataset, synthetic_rotations, write_dataset, PreprocessConfig};
use crate::encoder::{load_checkpoint, save_checkpoint};
use crate::error::{usage_err, Error, Result};
use crate::eval::{evaluate, EvalConfig, EVAL_CSV_HEADER};
use crate::report::{build_report, format_eval_row, format_report_csv, parse_eval_csv, EvalRow};
use crate::training::train;

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn header(echo: &[(String, String)]) -> String {
    echo.iter().map(|(k, v)| format!("# {k}={v}\n")).collect()
}

fn dataset_path(cfg: &RunConfig) -> Result<&Path> {
    cfg.dataset
        .as_deref()
        .ok_or_else(|| usage_err!("--dataset is required"))
}

/// Raw log → `<out>/dataset.txt`. Prints the statistics line.
pub fn cmd_preprocess(cfg: &RunConfig) -> Result<()> {
    let path = dataset_path(cfg)?;
    let (format, mut pre) = match cfg.preset {
        Some(p) => (p.format(), p.config(cfg.seed)),
        None => (
            cfg.format,
            PreprocessConfig {
                min_interactions: cfg.min_inter,
                max_interactions: cfg.max_inter,
                valid_user_sample: cfg.valid_users,
                seed: cfg.seed,
                dedup_consecutive: cfg.dedup,
            },
        ),
    };
    pre.dedup_consecutive |= cfg.dedup;
    let report = load_interactions(path, format)?;
    if report.malformed > 0 {
        eprintln!("warning: skipped {} malformed of {} lines", report.malformed, report.lines);
    }
    let dataset = preprocess(&report.events, &pre)?;
    ensure_dir(&cfg.out)?;
    let mut echo = cfg.echo("preprocess");
    echo.push(("format".into(), format.to_string()));
    echo.push(("min-inter".into(), pre.min_interactions.to_string()));
    echo.push(("max-inter".into(), pre.max_interactions.map_or("-".into(), |m| m.to_string())));
    echo.push(("valid-users".into(), pre.valid_user_sample.map_or("-".into(), |m| m.to_string())));
    echo.push(("malformed".into(), report.malformed.to_string()));
    write_dataset(&cfg.out.join("dataset.txt"), &dataset, &echo)?;
    println!("{}", dataset.stats);
    Ok(())
}

/// Planted rotations → `<out>/dataset.txt`.
pub fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    if cfg.vocab < 3 || cfg.users == 0 {
        return Err(usage_err!("synth needs --vocab >= 3 and --users >= 1"));
    }
    let dataset = synthetic_rotations(cfg.vocab, cfg.users, cfg.seed);
    ensure_dir(&cfg.out)?;
    let mut echo = cfg.echo("synth");
    echo.push(("users".into(), cfg.users.to_string()));
    echo.push(("vocab".into(), cfg.vocab.to_string()));
    write_dataset(&cfg.out.join("dataset.txt"), &dataset, &echo)?;
    println!("{}", dataset.stats);
    Ok(())
}

/// Canonical dataset → `<out>/checkpoint.bin` and `<out>/train_log.csv`.
pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let dataset = read_dataset(dataset_path(cfg)?)?;
    let splits = leave_one_out_split(&dataset)?;
    let tc = cfg.train_config(dataset.vocab_size())?;
    ensure_dir(&cfg.out)?;
    let echo = cfg.echo("train");

    let log_path = cfg.out.join("train_log.csv");
    let mut log = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    writeln!(log, "{}epoch,loss,seconds,peak_attn_bytes", header(&echo)).map_err(|e| Error::io(&log_path, e))?;
    let log = RefCell::new(log);
    let io_error: RefCell<Option<std::io::Error>> = RefCell::new(None);
    let trained = train(&splits.train, &tc, |row| {
        let line = format!("{},{:.10},{:.6},{}\n", row.epoch, row.loss, row.seconds, row.peak_attn_bytes);
        if let Err(e) = log.borrow_mut().write_all(line.as_bytes()) {
            io_error.borrow_mut().get_or_insert(e);
        }
        eprintln!("epoch {} loss {:.6} ({:.2}s)", row.epoch, row.loss, row.seconds);
    });
    if let Some(e) = io_error.into_inner() {
        return Err(Error::io(&log_path, e));
    }
    let trained = trained?;
    save_checkpoint(&cfg.out.join("checkpoint.bin"), &tc.model, &trained.params, &echo)
}

/// Checkpoint + canonical dataset → `<out>/eval.csv`.
pub fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    let data_path = dataset_path(cfg)?;
    let dataset = read_dataset(data_path)?;
    let ck_path: PathBuf = cfg.checkpoint.clone().unwrap_or_else(|| cfg.out.join("checkpoint.bin"));
    let ck = load_checkpoint(&ck_path)?;
    if ck.config.vocab_size != dataset.vocab_size() {
        return Err(usage_err!(
            "checkpoint vocabulary {} does not match dataset vocabulary {}",
            ck.config.vocab_size,
            dataset.vocab_size()
        ));
    }
    let splits = leave_one_out_split(&dataset)?;
    let holdouts = if cfg.split == "valid" { &splits.valid } else { &splits.test };
    let seq_len = ck.config.max_len;
    let ec = EvalConfig {
        tie_rule: cfg.tie_rule,
        exclude_history: cfg.exclude_history,
        ..EvalConfig::new(seq_len)
    };
    let result = evaluate(&ck.params, &ck.config, holdouts, &ec)?;
    let seed = ck
        .echo
        .iter()
        .find(|(k, _)| k == "seed")
        .and_then(|(_, v)| v.parse().ok())
        .unwrap_or(cfg.seed);
    let name = cfg.name.clone().unwrap_or_else(|| {
        data_path
            .parent()
            .and_then(Path::file_name)
            .filter(|_| data_path.file_stem().is_some_and(|s| s == "dataset"))
            .or_else(|| data_path.file_stem())
            .map_or_else(|| "dataset".to_string(), |s| s.to_string_lossy().into_owned())
    });
    let row = EvalRow {
        dataset: name,
        mechanism: ck.config.attention.mechanism,
        seq_len,
        d: ck.config.dim,
        seed,
        ndcg: result.ndcg_at_k,
        hit: result.hit_at_k,
        users: result.user_count,
    };
    ensure_dir(&cfg.out)?;
    let mut echo = cfg.echo("eval");
    echo.push(("checkpoint-mechanism".into(), ck.config.attention.mechanism.to_string()));
    echo.push(("split".into(), cfg.split.clone()));
    let text = format!("{}{EVAL_CSV_HEADER}\n{}\n", header(&echo), format_eval_row(&row));
    write_file(&cfg.out.join("eval.csv"), &text)?;
    println!("{EVAL_CSV_HEADER}\n{}", format_eval_row(&row));
    Ok(())
}

/// Kernel sweep → `<out>/bench.csv` and four SVG charts.
pub fn cmd_bench(cfg: &RunConfig) -> Result<()> {
    if !crate::bench::alloc::is_tracking() {
        eprintln!("warning: built without allocation tracking; peak_bytes will read 0");
    }
    let sc = SweepConfig {
        mechanisms: cfg.mechanisms.clone(),
        ns: cfg.ns.clone(),
        ds: cfg.ds.clone(),
        seeds: cfg.seeds.clone(),
        reps: cfg.reps,
        attention: cfg.attention(),
    };
    // Benchmarks are single-threaded regardless of --threads.
    let records = crate::parallel::with_threads(1, || sweep(&sc))?;
    ensure_dir(&cfg.out)?;
    let mut echo = cfg.echo("bench");
    echo.push(("ns".into(), join(&cfg.ns)));
    echo.push(("ds".into(), join(&cfg.ds)));
    echo.push(("seeds".into(), join(&cfg.seeds)));
    echo.push(("reps".into(), cfg.reps.to_string()));
    echo.push(("rep-encoding".into(), "seed_index*reps+r".into()));
    echo.push(("peak-bytes".into(), "transient attention heap bytes excluding inputs and output".into()));
    write_file(&cfg.out.join("bench.csv"), &format_bench_csv(&records, &echo))?;
    for (name, svg) in sweep_plots(&records) {
        write_file(&cfg.out.join(name), &svg)?;
    }
    Ok(())
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Bench and/or eval CSVs → `<out>/report.csv`, also printed.
pub fn cmd_report(cfg: &RunConfig) -> Result<()> {
    if cfg.bench.is_none() && cfg.eval.is_empty() {
        return Err(usage_err!("report needs --bench and/or --eval"));
    }
    let read = |p: &Path| fs::read_to_string(p).map_err(|e| Error::io(p, e));
    let bench = match &cfg.bench {
        Some(p) => parse_bench_csv(&read(p)?)?,
        None => Vec::new(),
    };
    let mut eval = Vec::new();
    for p in &cfg.eval {
        eval.extend(parse_eval_csv(&read(p)?)?);
    }
    let rows = build_report(&bench, &eval, cfg.variant, &cfg.baselines)?;
    let mut echo = vec![("command".to_string(), "report".to_string())];
    echo.push(("variant".into(), cfg.variant.to_string()));
    echo.push(("baselines".into(), join(&cfg.baselines)));
    echo.push(("bench".into(), cfg.bench.as_ref().map_or("-".into(), |p| p.display().to_string())));
    echo.push(("eval".into(), join(&cfg.eval.iter().map(|p| p.display()).collect::<Vec<_>>())));
    let text = format_report_csv(&rows, &echo);
    ensure_dir(&cfg.out)?;
    write_file(&cfg.out.join("report.csv"), &text)?;
    print!("{text}");
    Ok(())
}
