//! Interaction logs to padded training batches.
//!
//! Pipeline: [`load_interactions`] parses a raw log, [`preprocess`] groups
//! events into chronological per-user sequences and reindexes items to
//! `1..=|V|`, [`leave_one_out_split`] holds out the last two items of each
//! user, and [`make_batches`] truncates and left-pads to a fixed length.
//!
//! The canonical dataset file written by [`write_dataset`] is plain text:
//!
//! ```text
//! cosrec-dataset v1
//! # free-form echo lines
//! users 3
//! items 4
//! interactions 11
//! valid_users 0 2
//! item 1 1193
//! ...
//! user 0 u17
//! ...
//! sequences
//! 1 2 3 4
//! 2 3 1
//! 4 1 2 3
//! ```
//!
//! Each line after `sequences` is one user's internal item ids in
//! chronological order, in the same order as the `user` lines.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::PAD;
use crate::error::{data_err, usage_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    /// `user::item::rating::timestamp`
    MovielensDat,
    /// `user,item,rating,timestamp`, optional header row.
    AmazonCsv,
    /// `user\titem\ttimestamp` or `user\titem\trating\ttimestamp`.
    Tsv,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "movielens_dat" => Ok(Format::MovielensDat),
            "amazon_csv" => Ok(Format::AmazonCsv),
            "tsv" => Ok(Format::Tsv),
            other => Err(usage_err!(
                "unknown format {other:?} (expected movielens_dat|amazon_csv|tsv)"
            )),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::MovielensDat => "movielens_dat",
            Format::AmazonCsv => "amazon_csv",
            Format::Tsv => "tsv",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Event {
    pub user: String,
    pub item: String,
    pub timestamp: i64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LoadReport {
    pub events: Vec<Event>,
    /// Non-blank lines seen, header excluded.
    pub lines: usize,
    pub malformed: usize,
}

fn event(user: &str, item: &str, ts: &str) -> Option<Event> {
    let (user, item, ts) = (user.trim(), item.trim(), ts.trim());
    if user.is_empty() || item.is_empty() {
        return None;
    }
    let timestamp: i64 = ts.parse().ok()?;
    (timestamp >= 0).then(|| Event {
        user: user.to_string(),
        item: item.to_string(),
        timestamp,
    })
}

/// Parse one line; `None` marks it malformed.
pub fn parse_line(line: &str, format: Format) -> Option<Event> {
    match format {
        Format::MovielensDat => {
            let f: Vec<&str> = line.split("::").collect();
            (f.len() == 4 && f[2].trim().parse::<f64>().is_ok())
                .then(|| event(f[0], f[1], f[3]))
                .flatten()
        }
        Format::AmazonCsv => {
            let f: Vec<&str> = line.split(',').collect();
            (f.len() == 4).then(|| event(f[0], f[1], f[3])).flatten()
        }
        Format::Tsv => {
            let f: Vec<&str> = line.split('\t').collect();
            match f.len() {
                3 => event(f[0], f[1], f[2]),
                4 => event(f[0], f[1], f[3]),
                _ => None,
            }
        }
    }
}

/// Fraction of malformed lines tolerated before the load aborts.
pub const MAX_MALFORMED_FRACTION: f64 = 0.001;

pub fn parse_interactions(text: &str, format: Format) -> Result<LoadReport> {
    let mut events = Vec::new();
    let mut lines = 0;
    let mut malformed = 0;
    let mut first = true;
    for raw in text.lines() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let parsed = parse_line(line, format);
        if first && format == Format::AmazonCsv && parsed.is_none() {
            // header row
            first = false;
            continue;
        }
        first = false;
        lines += 1;
        match parsed {
            Some(e) => events.push(e),
            None => malformed += 1,
        }
    }
    if lines == 0 {
        return Err(data_err!("no interaction lines found"));
    }
    if malformed as f64 > MAX_MALFORMED_FRACTION * lines as f64 {
        return Err(data_err!(
            "{malformed} of {lines} lines malformed (limit {:.1}%)",
            MAX_MALFORMED_FRACTION * 100.0
        ));
    }
    Ok(LoadReport {
        events,
        lines,
        malformed,
    })
}

pub fn load_interactions(path: &Path, format: Format) -> Result<LoadReport> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    // MovieLens files are Latin-1; ids are ASCII so lossy decoding is safe.
    let text = String::from_utf8_lossy(&bytes);
    parse_interactions(&text, format).map_err(|e| match e {
        Error::Data(msg) => data_err!("{}: {msg}", path.display()),
        other => other,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessConfig {
    pub min_interactions: usize,
    pub max_interactions: Option<usize>,
    pub valid_user_sample: Option<usize>,
    pub seed: u64,
    /// Collapse runs of the same item into one interaction.
    pub dedup_consecutive: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            min_interactions: 3,
            max_interactions: None,
            valid_user_sample: None,
            seed: 42,
            dedup_consecutive: false,
        }
    }
}

/// Named filtering rules for the public datasets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Ml1m,
    Ml20m,
    Beauty,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ml-1m" => Ok(Preset::Ml1m),
            "ml-20m" => Ok(Preset::Ml20m),
            "beauty" => Ok(Preset::Beauty),
            other => Err(usage_err!("unknown preset {other:?} (expected ml-1m|ml-20m|beauty)")),
        }
    }
}

impl Preset {
    pub fn format(self) -> Format {
        match self {
            Preset::Ml1m | Preset::Ml20m => Format::MovielensDat,
            Preset::Beauty => Format::AmazonCsv,
        }
    }

    pub fn config(self, seed: u64) -> PreprocessConfig {
        let base = PreprocessConfig {
            seed,
            ..PreprocessConfig::default()
        };
        match self {
            Preset::Ml1m => base,
            Preset::Ml20m => PreprocessConfig {
                min_interactions: 10,
                max_interactions: Some(200),
                valid_user_sample: Some(5000),
                ..base
            },
            Preset::Beauty => PreprocessConfig {
                min_interactions: 5,
                max_interactions: Some(200),
                ..base
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub mean_length: f64,
    /// `1 − interactions / (users · items)`.
    pub sparsity: f64,
}

impl DatasetStats {
    pub fn of(sequences: &[Vec<u32>], items: usize) -> Self {
        let users = sequences.len();
        let interactions: usize = sequences.iter().map(Vec::len).sum();
        let cells = users as f64 * items as f64;
        Self {
            users,
            items,
            interactions,
            mean_length: if users == 0 { 0.0 } else { interactions as f64 / users as f64 },
            sparsity: if cells == 0.0 { 0.0 } else { 1.0 - interactions as f64 / cells },
        }
    }
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "users={} items={} interactions={} mean_length={:.2} sparsity={:.2}%",
            self.users,
            self.items,
            self.interactions,
            self.mean_length,
            self.sparsity * 100.0
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InteractionDataset {
    /// External user ids, one per sequence.
    pub users: Vec<String>,
    /// Chronological internal item ids, each in `1..=items.len()`.
    pub sequences: Vec<Vec<u32>>,
    /// `items[i]` is the external id of internal item `i + 1`.
    pub items: Vec<String>,
    /// Indices of users evaluated on their validation item, sorted.
    pub valid_users: Vec<usize>,
    pub stats: DatasetStats,
}

impl InteractionDataset {
    pub fn vocab_size(&self) -> usize {
        self.items.len()
    }

    /// Build from internal sequences whose items are already `1..=vocab`.
    pub fn from_sequences(sequences: Vec<Vec<u32>>, vocab: usize) -> Result<Self> {
        for s in &sequences {
            if let Some(&bad) = s.iter().find(|&&x| x == PAD || x as usize > vocab) {
                return Err(data_err!("item id {bad} outside 1..={vocab}"));
            }
        }
        let users = (0..sequences.len()).map(|u| u.to_string()).collect();
        let items = (1..=vocab).map(|i| i.to_string()).collect();
        let stats = DatasetStats::of(&sequences, vocab);
        let valid_users = (0..sequences.len()).collect();
        Ok(Self {
            users,
            sequences,
            items,
            valid_users,
            stats,
        })
    }
}

/// Group, sort, filter and reindex. Users keep first-appearance order;
/// events of one user are stably sorted by timestamp.
pub fn preprocess(events: &[Event], cfg: &PreprocessConfig) -> Result<InteractionDataset> {
    if cfg.min_interactions < 3 {
        return Err(usage_err!("min interactions must be >= 3, got {}", cfg.min_interactions));
    }
    if cfg.max_interactions.is_some_and(|m| m < cfg.min_interactions) {
        return Err(usage_err!("max interactions below min interactions"));
    }
    let mut order: Vec<&str> = Vec::new();
    let mut grouped: HashMap<&str, Vec<&Event>> = HashMap::new();
    for e in events {
        grouped
            .entry(e.user.as_str())
            .or_insert_with(|| {
                order.push(e.user.as_str());
                Vec::new()
            })
            .push(e);
    }

    let mut kept: Vec<(&str, Vec<&str>)> = Vec::new();
    for user in order {
        let mut evs = grouped.remove(user).expect("grouped user");
        evs.sort_by_key(|e| e.timestamp);
        let mut items: Vec<&str> = evs.iter().map(|e| e.item.as_str()).collect();
        if cfg.dedup_consecutive {
            items.dedup();
        }
        let len = items.len();
        if len >= cfg.min_interactions && cfg.max_interactions.is_none_or(|m| len <= m) {
            kept.push((user, items));
        }
    }
    if kept.is_empty() {
        return Err(data_err!("no users left after filtering"));
    }

    let mut index: HashMap<&str, u32> = HashMap::new();
    let mut items: Vec<String> = Vec::new();
    let mut users = Vec::with_capacity(kept.len());
    let mut sequences = Vec::with_capacity(kept.len());
    for (user, seq) in kept {
        let ids = seq
            .into_iter()
            .map(|it| {
                *index.entry(it).or_insert_with(|| {
                    items.push(it.to_string());
                    items.len() as u32
                })
            })
            .collect();
        users.push(user.to_string());
        sequences.push(ids);
    }

    let all: Vec<usize> = (0..users.len()).collect();
    let valid_users = match cfg.valid_user_sample {
        Some(k) if k < users.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut picked = crate::training::sample_distinct(&all, k, &mut rng);
            picked.sort_unstable();
            picked
        }
        _ => all,
    };
    let stats = DatasetStats::of(&sequences, items.len());
    Ok(InteractionDataset {
        users,
        sequences,
        items,
        valid_users,
        stats,
    })
}

/// A held-out item and everything before it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Holdout {
    pub user: usize,
    pub context: Vec<u32>,
    pub target: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<Vec<u32>>,
    pub valid: Vec<Holdout>,
    pub test: Vec<Holdout>,
}

/// Test is the last item, validation the second to last, train the rest.
pub fn leave_one_out_split(dataset: &InteractionDataset) -> Result<Splits> {
    let mut train = Vec::with_capacity(dataset.sequences.len());
    let mut test = Vec::with_capacity(dataset.sequences.len());
    for (u, seq) in dataset.sequences.iter().enumerate() {
        let n = seq.len();
        if n < 3 {
            return Err(data_err!("user {} has {n} interactions, need at least 3", dataset.users[u]));
        }
        train.push(seq[..n - 2].to_vec());
        test.push(Holdout {
            user: u,
            context: seq[..n - 1].to_vec(),
            target: seq[n - 1],
        });
    }
    let valid = dataset
        .valid_users
        .iter()
        .map(|&u| {
            let seq = &dataset.sequences[u];
            let n = seq.len();
            Holdout {
                user: u,
                context: seq[..n - 2].to_vec(),
                target: seq[n - 2],
            }
        })
        .collect();
    Ok(Splits { train, valid, test })
}

/// Keep the most recent `n` items and left-pad with PAD to length `n`.
pub fn pad_left(seq: &[u32], n: usize) -> Vec<u32> {
    let tail = &seq[seq.len().saturating_sub(n)..];
    let mut out = vec![PAD; n - tail.len()];
    out.extend_from_slice(tail);
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    /// Index of each sequence in the input slice.
    pub users: Vec<usize>,
    /// Padded token rows, each of length `n`.
    pub tokens: Vec<Vec<u32>>,
    /// Real (unpadded) length of each row.
    pub lengths: Vec<usize>,
}

/// Fixed-length padded batches; with an rng the user order is shuffled.
pub fn make_batches(
    sequences: &[Vec<u32>],
    n: usize,
    batch_size: usize,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Vec<Batch>> {
    if n == 0 || batch_size == 0 {
        return Err(usage_err!("sequence length and batch size must be positive"));
    }
    if let Some(u) = sequences.iter().position(Vec::is_empty) {
        return Err(data_err!("sequence {u} is empty"));
    }
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    if let Some(rng) = rng {
        order.shuffle(rng);
    }
    Ok(order
        .chunks(batch_size)
        .map(|chunk| Batch {
            users: chunk.to_vec(),
            tokens: chunk.iter().map(|&u| pad_left(&sequences[u], n)).collect(),
            lengths: chunk.iter().map(|&u| sequences[u].len().min(n)).collect(),
        })
        .collect())
}

const DATASET_MAGIC: &str = "cosrec-dataset v1";

pub fn format_dataset(dataset: &InteractionDataset, echo: &[(String, String)]) -> String {
    let mut s = format!("{DATASET_MAGIC}\n");
    for (k, v) in echo {
        s.push_str(&format!("# {k}={v}\n"));
    }
    s.push_str(&format!("# stats {}\n", dataset.stats));
    s.push_str(&format!("users {}\n", dataset.users.len()));
    s.push_str(&format!("items {}\n", dataset.items.len()));
    s.push_str(&format!("interactions {}\n", dataset.stats.interactions));
    let valid: Vec<String> = dataset.valid_users.iter().map(usize::to_string).collect();
    s.push_str(&format!("valid_users {}\n", valid.join(" ")).replace(" \n", "\n"));
    for (i, ext) in dataset.items.iter().enumerate() {
        s.push_str(&format!("item {} {ext}\n", i + 1));
    }
    for (u, ext) in dataset.users.iter().enumerate() {
        s.push_str(&format!("user {u} {ext}\n"));
    }
    s.push_str("sequences\n");
    for seq in &dataset.sequences {
        let ids: Vec<String> = seq.iter().map(u32::to_string).collect();
        s.push_str(&ids.join(" "));
        s.push('\n');
    }
    s
}

pub fn write_dataset(path: &Path, dataset: &InteractionDataset, echo: &[(String, String)]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, format_dataset(dataset, echo)).map_err(|e| Error::io(path, e))
}

fn header_count(line: Option<&str>, key: &str) -> Result<usize> {
    line.and_then(|l| l.strip_prefix(key))
        .and_then(|r| r.trim().parse().ok())
        .ok_or_else(|| data_err!("dataset file: expected `{key} <count>`"))
}

pub fn parse_dataset(text: &str) -> Result<InteractionDataset> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    if lines.next() != Some(DATASET_MAGIC) {
        return Err(data_err!("dataset file: unrecognized header"));
    }
    let users_n = header_count(lines.next(), "users")?;
    let items_n = header_count(lines.next(), "items")?;
    let interactions = header_count(lines.next(), "interactions")?;
    let valid_users: Vec<usize> = lines
        .next()
        .and_then(|l| l.strip_prefix("valid_users"))
        .ok_or_else(|| data_err!("dataset file: expected `valid_users`"))?
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| data_err!("dataset file: bad user index {t:?}")))
        .collect::<Result<_>>()?;
    let mut items = Vec::with_capacity(items_n);
    for i in 1..=items_n {
        let line = lines.next().unwrap_or_default();
        let mut f = line.splitn(3, ' ');
        if f.next() != Some("item") || f.next() != Some(i.to_string().as_str()) {
            return Err(data_err!("dataset file: expected item {i}, found {line:?}"));
        }
        items.push(f.next().unwrap_or_default().to_string());
    }
    let mut users = Vec::with_capacity(users_n);
    for u in 0..users_n {
        let line = lines.next().unwrap_or_default();
        let mut f = line.splitn(3, ' ');
        if f.next() != Some("user") || f.next() != Some(u.to_string().as_str()) {
            return Err(data_err!("dataset file: expected user {u}, found {line:?}"));
        }
        users.push(f.next().unwrap_or_default().to_string());
    }
    if lines.next() != Some("sequences") {
        return Err(data_err!("dataset file: expected `sequences`"));
    }
    let mut sequences = Vec::with_capacity(users_n);
    for line in lines.by_ref().take(users_n) {
        let seq: Vec<u32> = line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| data_err!("dataset file: bad item id {t:?}")))
            .collect::<Result<_>>()?;
        if let Some(&bad) = seq.iter().find(|&&x| x == PAD || x as usize > items_n) {
            return Err(data_err!("dataset file: item id {bad} outside 1..={items_n}"));
        }
        sequences.push(seq);
    }
    if sequences.len() != users_n || lines.next().is_some() {
        return Err(data_err!("dataset file: expected exactly {users_n} sequence lines"));
    }
    if valid_users.iter().any(|&u| u >= users_n) {
        return Err(data_err!("dataset file: validation user index out of range"));
    }
    let stats = DatasetStats::of(&sequences, items_n);
    if stats.interactions != interactions {
        return Err(data_err!(
            "dataset file: header says {interactions} interactions, sequences hold {}",
            stats.interactions
        ));
    }
    Ok(InteractionDataset {
        users,
        sequences,
        items,
        valid_users,
        stats,
    })
}

pub fn read_dataset(path: &Path) -> Result<InteractionDataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text)
}

/// `users` sequences, each a random rotation of `1, 2, …, vocab`.
pub fn synthetic_rotations(vocab: usize, users: usize, seed: u64) -> InteractionDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sequences = (0..users)
        .map(|_| {
            let start = rand::Rng::random_range(&mut rng, 0..vocab);
            (0..vocab).map(|i| ((start + i) % vocab + 1) as u32).collect()
        })
        .collect();
    InteractionDataset::from_sequences(sequences, vocab).expect("rotation ids lie in 1..=vocab")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(user: &str, item: &str, ts: i64) -> Event {
        Event {
            user: user.into(),
            item: item.into(),
            timestamp: ts,
        }
    }

    #[test]
    fn parses_each_format() {
        let ml = parse_interactions("1::1193::5::978300760\n1::661::3::978302109\n2::914::3::978301968\n", Format::MovielensDat).unwrap();
        assert_eq!(ml.events.len(), 3);
        assert_eq!(ml.events[0], ev("1", "1193", 978300760));
        let csv = parse_interactions("user,item,rating,timestamp\nA1,B9,5.0,1400000000\n", Format::AmazonCsv).unwrap();
        assert_eq!(csv.events, vec![ev("A1", "B9", 1400000000)]);
        let csv_no_header = parse_interactions("A1,B9,5.0,1400000000\n", Format::AmazonCsv).unwrap();
        assert_eq!(csv_no_header.events.len(), 1);
        let tsv = parse_interactions("u\ti\t5\nu\tj\t4.0\t6\n", Format::Tsv).unwrap();
        assert_eq!(tsv.events, vec![ev("u", "i", 5), ev("u", "j", 6)]);
    }

    #[test]
    fn malformed_lines_are_counted_and_limited() {
        let mut text: String = (0..2000).map(|i| format!("{}::{}::4::{}\n", i % 7, i, i)).collect();
        text.push_str("garbage\n1::2::x::3\n");
        let r = parse_interactions(&text, Format::MovielensDat).unwrap();
        assert_eq!((r.lines, r.malformed, r.events.len()), (2002, 2, 2000));
        text.push_str("a\nb\nc\n");
        assert!(matches!(parse_interactions(&text, Format::MovielensDat), Err(Error::Data(_))));
        assert!(matches!(parse_interactions("", Format::Tsv), Err(Error::Data(_))));
        assert!(parse_line("1::2::3::-5", Format::MovielensDat).is_none());
        assert!(load_interactions(Path::new("/no/such/file"), Format::Tsv).is_err());
    }

    #[test]
    fn preprocess_filters_and_sorts() {
        let events = vec![
            ev("a", "x", 3),
            ev("b", "y", 1),
            ev("a", "y", 1),
            ev("a", "z", 1),
            ev("b", "x", 2),
            ev("a", "w", 2),
        ];
        let d = preprocess(&events, &PreprocessConfig::default()).unwrap();
        assert_eq!(d.users, vec!["a"]);
        // ties on ts=1 keep input order: y then z
        assert_eq!(d.items, vec!["y", "z", "w", "x"]);
        assert_eq!(d.sequences, vec![vec![1, 2, 3, 4]]);
        assert_eq!(d.stats.interactions, 4);
        assert!(matches!(
            preprocess(&events[1..2], &PreprocessConfig::default()),
            Err(Error::Data(_))
        ));
        let bad = PreprocessConfig { min_interactions: 2, ..PreprocessConfig::default() };
        assert!(matches!(preprocess(&events, &bad), Err(Error::Usage(_))));
    }

    #[test]
    fn dedup_flag_collapses_runs() {
        let events: Vec<Event> = ["p", "p", "q", "q", "q", "r", "p"]
            .iter()
            .enumerate()
            .map(|(t, i)| ev("u", i, t as i64))
            .collect();
        let kept = preprocess(&events, &PreprocessConfig::default()).unwrap();
        assert_eq!(kept.stats.interactions, 7);
        let cfg = PreprocessConfig { dedup_consecutive: true, ..PreprocessConfig::default() };
        assert_eq!(preprocess(&events, &cfg).unwrap().sequences, vec![vec![1, 2, 3, 1]]);
    }

    #[test]
    fn validation_sampling_is_seeded() {
        let events: Vec<Event> = (0..40)
            .flat_map(|u| (0..4).map(move |t| ev(&u.to_string(), &(t + u).to_string(), t)))
            .collect();
        let cfg = PreprocessConfig { valid_user_sample: Some(5), seed: 3, ..PreprocessConfig::default() };
        let a = preprocess(&events, &cfg).unwrap();
        let b = preprocess(&events, &cfg).unwrap();
        assert_eq!(a.valid_users.len(), 5);
        assert_eq!(a.valid_users, b.valid_users);
        assert!(a.valid_users.windows(2).all(|w| w[0] < w[1]));
        let split = leave_one_out_split(&a).unwrap();
        assert_eq!(split.valid.len(), 5);
        assert_eq!(split.test.len(), 40);
    }

    #[test]
    fn split_definition() {
        let d = InteractionDataset::from_sequences(vec![vec![1, 2, 3, 4]], 4).unwrap();
        let s = leave_one_out_split(&d).unwrap();
        assert_eq!(s.train, vec![vec![1, 2]]);
        assert_eq!(s.valid, vec![Holdout { user: 0, context: vec![1, 2], target: 3 }]);
        assert_eq!(s.test, vec![Holdout { user: 0, context: vec![1, 2, 3], target: 4 }]);
    }

    #[test]
    fn padding_and_truncation() {
        assert_eq!(pad_left(&[7, 8, 9], 5), vec![0, 0, 7, 8, 9]);
        assert_eq!(pad_left(&[1, 2, 3, 4, 5, 6, 7], 5), vec![3, 4, 5, 6, 7]);
        let seqs: Vec<Vec<u32>> = (1..=10).map(|i| vec![i; i as usize]).collect();
        let b = make_batches(&seqs, 4, 3, None).unwrap();
        assert_eq!(b.len(), 4);
        assert_eq!(b[0].lengths, vec![1, 2, 3]);
        assert_eq!(b[3].lengths, vec![4]);
        assert!(make_batches(&[vec![]], 4, 3, None).is_err());
    }

    #[test]
    fn shuffled_batches_reproducible() {
        let seqs: Vec<Vec<u32>> = (1..=50).map(|i| vec![i]).collect();
        let run = |s| make_batches(&seqs, 2, 8, Some(&mut ChaCha8Rng::seed_from_u64(s))).unwrap();
        assert_eq!(run(1), run(1));
        assert_ne!(run(1), run(2));
        let mut all: Vec<usize> = run(1).iter().flat_map(|b| b.users.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn canonical_file_round_trip() {
        let events: Vec<Event> = (0..30)
            .map(|i| ev(&format!("u{}", i % 4), &format!("item{}", i % 9), i))
            .collect();
        let cfg = PreprocessConfig { valid_user_sample: Some(2), ..PreprocessConfig::default() };
        let d = preprocess(&events, &cfg).unwrap();
        let text = format_dataset(&d, &[("seed".into(), "42".into())]);
        assert_eq!(parse_dataset(&text).unwrap(), d);
        assert_eq!(format_dataset(&d, &[("seed".into(), "42".into())]), text);
        assert!(parse_dataset(&text.replace("interactions 30", "interactions 31")).is_err());
    }

    #[test]
    fn rotations_are_rotations() {
        let d = synthetic_rotations(50, 20, 1);
        for s in &d.sequences {
            for w in s.windows(2) {
                assert_eq!(w[1], w[0] % 50 + 1);
            }
        }
        assert_eq!(d.stats.interactions, 1000);
    }

    #[test]
    fn presets() {
        assert_eq!(Preset::Ml20m.config(0).min_interactions, 10);
        assert_eq!(Preset::Beauty.config(0).max_interactions, Some(200));
        assert_eq!(Preset::Ml1m.config(0).max_interactions, None);
        assert_eq!("beauty".parse::<Preset>().unwrap().format(), Format::AmazonCsv);
    }

    fn arb_events() -> impl Strategy<Value = Vec<Event>> {
        prop::collection::vec((0u8..12, 0u8..30, 0i64..50), 1..300).prop_map(|v| {
            v.into_iter()
                .map(|(u, i, t)| ev(&u.to_string(), &i.to_string(), t))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn item_map_is_bijection_and_sequences_chronological(events in arb_events()) {
            if let Ok(d) = preprocess(&events, &PreprocessConfig::default()) {
                let mut seen = vec![false; d.items.len() + 1];
                for s in &d.sequences {
                    for &x in s {
                        prop_assert!(x >= 1 && x as usize <= d.items.len());
                        seen[x as usize] = true;
                    }
                }
                prop_assert!(seen[1..].iter().all(|&b| b));
                let mut uniq = d.items.clone();
                uniq.sort();
                uniq.dedup();
                prop_assert_eq!(uniq.len(), d.items.len());
                for (u, s) in d.users.iter().zip(&d.sequences) {
                    let ts: Vec<i64> = s.iter().map(|&x| {
                        let ext = &d.items[x as usize - 1];
                        events.iter().filter(|e| &e.user == u && &e.item == ext).map(|e| e.timestamp).min().unwrap()
                    }).collect();
                    // first occurrence of each item appears in time order
                    let mut firsts = Vec::new();
                    let mut seen_items = std::collections::HashSet::new();
                    for (x, t) in s.iter().zip(&ts) {
                        if seen_items.insert(*x) { firsts.push(*t); }
                    }
                    prop_assert!(firsts.windows(2).all(|w| w[0] <= w[1]));
                }
            }
        }

        #[test]
        fn tightening_filter_never_adds_users(events in arb_events(), lo in 3usize..8, extra in 0usize..5) {
            let count = |min, max| preprocess(&events, &PreprocessConfig {
                min_interactions: min,
                max_interactions: max,
                ..PreprocessConfig::default()
            }).map(|d| d.stats.users).unwrap_or(0);
            prop_assert!(count(lo + extra, None) <= count(lo, None));
            prop_assert!(count(lo, Some(lo + extra)) <= count(lo, None));
        }

        #[test]
        fn splits_reassemble(seqs in prop::collection::vec(prop::collection::vec(1u32..20, 3..15), 1..20)) {
            let d = InteractionDataset::from_sequences(seqs.clone(), 20).unwrap();
            let s = leave_one_out_split(&d).unwrap();
            for (u, seq) in seqs.iter().enumerate() {
                let mut whole = s.train[u].clone();
                whole.push(s.valid[u].target);
                whole.push(s.test[u].target);
                prop_assert_eq!(&whole, seq);
                prop_assert_eq!(&s.test[u].context[..], &seq[..seq.len() - 1]);
            }
        }
    }
}
