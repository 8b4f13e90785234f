//! Event logs, session datasets, and the sparse matrices built from them.
//!
//! The flow is: `load_events` parses a delimited file into an [`EventLog`],
//! `preprocess` groups events into time-ordered sessions and applies the
//! support filters, `chronological_split` carves train/test partitions by
//! session end time, and the `build_*` functions turn a dataset into the
//! weighted interaction matrices the solvers consume.

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

/// One interaction row from the raw log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub session: String,
    pub item: String,
    /// Unix seconds; fractional input timestamps are truncated.
    pub time: i64,
}

/// Raw events in input order, before any session grouping.
#[derive(Debug, Clone, Default)]
pub struct EventLog {
    pub events: Vec<Event>,
}

/// Column and delimiter choices for `load_events`.
#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub delimiter: u8,
    pub col_session: String,
    pub col_item: String,
    pub col_time: String,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            delimiter: b'\t',
            col_session: "SessionId".to_string(),
            col_item: "ItemId".to_string(),
            col_time: "Time".to_string(),
        }
    }
}

/// How many rejected-row descriptions to retain verbatim in the report.
const MAX_REJECTS_KEPT: usize = 50;

/// Outcome counts from parsing, including rejected rows with line numbers.
#[derive(Debug, Clone, Serialize)]
pub struct LoadReport {
    pub rows_read: u64,
    pub rows_kept: u64,
    pub rows_rejected: u64,
    /// (line number, reason) for the first rejected rows.
    pub rejected: Vec<(u64, String)>,
    pub reject_list_truncated: bool,
}

/// Parse a delimited event file with a header row.
///
/// Malformed rows are rejected individually and listed in the report by
/// line number; only an unreadable file or a fully empty result is fatal.
pub fn load_events(path: &Path, opts: &LoadOptions) -> Result<(EventLog, LoadReport)> {
    let file = std::fs::File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::config(format!("input file not found: {}", path.display()))
        } else {
            Error::io(path, e)
        }
    })?;
    load_events_from(file, opts).map_err(|e| match e {
        Error::Data(msg) => Error::data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Same as `load_events` over any reader; used directly in tests.
pub fn load_events_from<R: Read>(reader: R, opts: &LoadOptions) -> Result<(EventLog, LoadReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .flexible(true)
        .from_reader(reader);

    let headers = rdr
        .headers()
        .map_err(|e| Error::data(format!("cannot read header row: {e}")))?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::data(format!("missing column '{name}' in header")))
    };
    let si = col(&opts.col_session)?;
    let ii = col(&opts.col_item)?;
    let ti = col(&opts.col_time)?;

    let mut events = Vec::new();
    let mut report = LoadReport {
        rows_read: 0,
        rows_kept: 0,
        rows_rejected: 0,
        rejected: Vec::new(),
        reject_list_truncated: false,
    };
    let reject = |report: &mut LoadReport, line: u64, reason: String| {
        report.rows_rejected += 1;
        if report.rejected.len() < MAX_REJECTS_KEPT {
            report.rejected.push((line, reason));
        } else {
            report.reject_list_truncated = true;
        }
    };

    for record in rdr.records() {
        report.rows_read += 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                reject(&mut report, line, format!("unparseable row: {e}"));
                continue;
            }
        };
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |idx: usize| record.get(idx).unwrap_or("");
        let session = field(si);
        let item = field(ii);
        let time_raw = field(ti);
        if session.is_empty() || item.is_empty() {
            reject(&mut report, line, "empty session or item id".to_string());
            continue;
        }
        let time = match parse_time(time_raw) {
            Some(t) => t,
            None => {
                reject(
                    &mut report,
                    line,
                    format!("bad timestamp '{time_raw}'"),
                );
                continue;
            }
        };
        report.rows_kept += 1;
        events.push(Event {
            session: session.to_string(),
            item: item.to_string(),
            time,
        });
    }

    if events.is_empty() {
        return Err(Error::data("no usable event rows".to_string()));
    }
    Ok((EventLog { events }, report))
}

/// Integer seconds, or fractional seconds truncated toward zero.
fn parse_time(s: &str) -> Option<i64> {
    if let Ok(t) = s.parse::<i64>() {
        return Some(t);
    }
    match s.parse::<f64>() {
        Ok(f) if f.is_finite() && f.abs() < 9.0e18 => Some(f.trunc() as i64),
        _ => None,
    }
}

/// Ordered item catalog: index in `ids` is the internal item id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    ids: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Build from any iterable of external ids; ids are deduplicated and
    /// sorted so the mapping is independent of input order.
    pub fn from_ids<I: IntoIterator<Item = String>>(ids: I) -> Self {
        let mut ids: Vec<String> = ids.into_iter().collect();
        ids.sort_unstable();
        ids.dedup();
        let index = ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        Vocab { ids, index }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    #[inline]
    pub fn get(&self, external: &str) -> Option<u32> {
        self.index.get(external).copied()
    }

    #[inline]
    pub fn external(&self, internal: u32) -> &str {
        &self.ids[internal as usize]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

/// Preprocessed sessions over an internal item vocabulary, ordered by
/// session end time.
#[derive(Debug, Clone)]
pub struct SessionDataset {
    pub sessions: Vec<Vec<u32>>,
    pub session_ids: Vec<String>,
    pub end_times: Vec<i64>,
    pub vocab: Vocab,
}

impl SessionDataset {
    /// Session count.
    #[inline]
    pub fn m(&self) -> usize {
        self.sessions.len()
    }

    /// Catalog size.
    #[inline]
    pub fn n(&self) -> usize {
        self.vocab.len()
    }

    pub fn total_events(&self) -> usize {
        self.sessions.iter().map(Vec::len).sum()
    }

    /// Keep only the sessions at `keep` (indices into this dataset, in the
    /// order given) and rebuild the vocabulary over the surviving items.
    pub fn restrict(&self, keep: &[usize]) -> SessionDataset {
        let vocab = Vocab::from_ids(
            keep.iter()
                .flat_map(|&s| self.sessions[s].iter())
                .map(|&it| self.vocab.external(it).to_string()),
        );
        let sessions = keep
            .iter()
            .map(|&s| {
                self.sessions[s]
                    .iter()
                    .map(|&it| vocab.get(self.vocab.external(it)).unwrap())
                    .collect()
            })
            .collect();
        SessionDataset {
            sessions,
            session_ids: keep.iter().map(|&s| self.session_ids[s].clone()).collect(),
            end_times: keep.iter().map(|&s| self.end_times[s]).collect(),
            vocab,
        }
    }
}

/// Filter thresholds for `preprocess`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PreprocessOptions {
    pub min_item_support: usize,
    pub min_session_len: usize,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions {
            min_item_support: 5,
            min_session_len: 2,
        }
    }
}

/// What the filters did, for the prepare report.
#[derive(Debug, Clone, Serialize)]
pub struct PreprocessReport {
    pub events_in: u64,
    pub sessions_in: u64,
    pub items_in: u64,
    pub events_dropped_rare_item: u64,
    pub sessions_dropped_short: u64,
    pub events_out: u64,
    pub sessions_out: u64,
    pub items_out: u64,
    pub min_item_support: usize,
    pub min_session_len: usize,
}

/// Group events into sessions and apply the two filters, in order: drop
/// events of items occurring fewer than `min_item_support` times, then drop
/// sessions left with fewer than `min_session_len` events.
///
/// Within a session events sort by timestamp, ties broken by input order.
/// Sessions are ordered by (end time, first appearance); items map to a
/// lexicographically sorted vocabulary.
pub fn preprocess(
    log: &EventLog,
    opts: &PreprocessOptions,
) -> Result<(SessionDataset, PreprocessReport)> {
    // Group, remembering first-appearance order of each session.
    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, Vec<(i64, usize, &str)>> = HashMap::new();
    for (pos, ev) in log.events.iter().enumerate() {
        groups
            .entry(ev.session.as_str())
            .or_insert_with(|| {
                order.push(ev.session.as_str());
                Vec::new()
            })
            .push((ev.time, pos, ev.item.as_str()));
    }

    let mut support: HashMap<&str, u64> = HashMap::new();
    for ev in &log.events {
        *support.entry(ev.item.as_str()).or_insert(0) += 1;
    }
    let items_in = support.len() as u64;

    let mut report = PreprocessReport {
        events_in: log.events.len() as u64,
        sessions_in: order.len() as u64,
        items_in,
        events_dropped_rare_item: 0,
        sessions_dropped_short: 0,
        events_out: 0,
        sessions_out: 0,
        items_out: 0,
        min_item_support: opts.min_item_support,
        min_session_len: opts.min_session_len,
    };

    // (end_time, first_pos, session_id, items) for surviving sessions.
    let mut kept: Vec<(i64, usize, &str, Vec<&str>)> = Vec::new();
    for (first_pos, sid) in order.iter().enumerate() {
        let mut evs = std::mem::take(groups.get_mut(sid).unwrap());
        evs.sort_by_key(|&(t, pos, _)| (t, pos));
        let before = evs.len();
        let items: Vec<&str> = evs
            .iter()
            .filter(|&&(_, _, item)| support[item] >= opts.min_item_support as u64)
            .map(|&(_, _, item)| item)
            .collect();
        report.events_dropped_rare_item += (before - items.len()) as u64;
        if items.len() < opts.min_session_len {
            report.sessions_dropped_short += 1;
            continue;
        }
        let end_time = evs.last().map(|&(t, _, _)| t).unwrap();
        kept.push((end_time, first_pos, sid, items));
    }
    kept.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

    if kept.is_empty() {
        return Err(Error::data(
            "no sessions survive preprocessing; thresholds too strict for this log".to_string(),
        ));
    }

    let vocab = Vocab::from_ids(
        kept.iter()
            .flat_map(|(_, _, _, items)| items.iter())
            .map(|s| s.to_string()),
    );
    let mut sessions = Vec::with_capacity(kept.len());
    let mut session_ids = Vec::with_capacity(kept.len());
    let mut end_times = Vec::with_capacity(kept.len());
    for (end, _, sid, items) in kept {
        report.events_out += items.len() as u64;
        sessions.push(items.iter().map(|it| vocab.get(it).unwrap()).collect());
        session_ids.push(sid.to_string());
        end_times.push(end);
    }
    report.sessions_out = sessions.len() as u64;
    report.items_out = vocab.len() as u64;

    Ok((
        SessionDataset {
            sessions,
            session_ids,
            end_times,
            vocab,
        },
        report,
    ))
}

/// Train/test partition rule, driven by session end times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SplitSpec {
    /// One split: sessions ending in the final `test_window_secs` go to test.
    Single { test_window_secs: i64 },
    /// Five contiguous equal-count chunks in time order, each split by the
    /// same last-window rule.
    FiveFold { test_window_secs: i64 },
}

/// Partition a dataset chronologically into train/test pairs.
///
/// Both sides of every pair are rebuilt with their own vocabulary; the
/// evaluator maps test items back into the model's catalog by external id.
pub fn chronological_split(
    ds: &SessionDataset,
    spec: SplitSpec,
) -> Result<Vec<(SessionDataset, SessionDataset)>> {
    let mut by_time: Vec<usize> = (0..ds.m()).collect();
    by_time.sort_by_key(|&i| (ds.end_times[i], i));

    let chunks: Vec<&[usize]> = match spec {
        SplitSpec::Single { .. } => vec![&by_time[..]],
        SplitSpec::FiveFold { .. } => {
            let k = 5;
            if ds.m() < k {
                return Err(Error::data(format!(
                    "five-fold split needs at least {k} sessions, have {}",
                    ds.m()
                )));
            }
            let base = ds.m() / k;
            let extra = ds.m() % k;
            let mut out = Vec::with_capacity(k);
            let mut start = 0;
            for f in 0..k {
                let len = base + usize::from(f < extra);
                out.push(&by_time[start..start + len]);
                start += len;
            }
            out
        }
    };
    let window = match spec {
        SplitSpec::Single { test_window_secs } | SplitSpec::FiveFold { test_window_secs } => {
            test_window_secs
        }
    };
    if window <= 0 {
        return Err(Error::config(format!(
            "test window must be positive, got {window} seconds"
        )));
    }

    let mut folds = Vec::with_capacity(chunks.len());
    for (f, chunk) in chunks.iter().enumerate() {
        let last_end = ds.end_times[*chunk.last().unwrap()];
        let cutoff = last_end - window;
        let train: Vec<usize> = chunk
            .iter()
            .copied()
            .filter(|&i| ds.end_times[i] <= cutoff)
            .collect();
        let test: Vec<usize> = chunk
            .iter()
            .copied()
            .filter(|&i| ds.end_times[i] > cutoff)
            .collect();
        if train.is_empty() || test.is_empty() {
            return Err(Error::data(format!(
                "fold {f}: test window of {window}s leaves {} train / {} test sessions",
                train.len(),
                test.len()
            )));
        }
        folds.push((ds.restrict(&train), ds.restrict(&test)));
    }
    Ok(folds)
}

/// Most-recent-first subsampling: keep `ceil(fraction · m)` sessions with
/// the latest end times and rebuild the vocabulary.
pub fn subsample_train(ds: &SessionDataset, fraction: f64) -> Result<SessionDataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config(format!(
            "subsample fraction must be in (0, 1], got {fraction}"
        )));
    }
    let keep_n = ((fraction * ds.m() as f64).ceil() as usize).clamp(1, ds.m());
    let mut by_time: Vec<usize> = (0..ds.m()).collect();
    by_time.sort_by_key(|&i| (ds.end_times[i], i));
    let mut keep = by_time.split_off(ds.m() - keep_n);
    keep.sort_unstable();
    Ok(ds.restrict(&keep))
}

/// Exponential position decay: weight of an item `gap` steps from the
/// anchor position.
#[inline]
pub fn position_weight(gap: usize, delta: f64) -> f64 {
    (-(gap as f64) / delta).exp()
}

/// Session-item matrix, one row per session.
///
/// With `decay = None` entries are a binary item presence. With
/// `decay = Some(delta)` each item gets `exp(-(L - p) / delta)` for the
/// 1-based position `p` of its latest occurrence in the session of length
/// `L`, so the final item carries weight 1.
pub fn build_binary_matrix(ds: &SessionDataset, decay: Option<f64>) -> SparseMatrix {
    let mut rows = Vec::with_capacity(ds.m());
    let mut scratch: HashMap<u32, f64> = HashMap::new();
    for sess in &ds.sessions {
        scratch.clear();
        let len = sess.len();
        for (p0, &item) in sess.iter().enumerate() {
            let w = match decay {
                None => 1.0,
                Some(delta) => position_weight(len - (p0 + 1), delta),
            };
            let e = scratch.entry(item).or_insert(0.0);
            if w > *e {
                *e = w;
            }
        }
        let mut row: Vec<(u32, f64)> = scratch.iter().map(|(&c, &v)| (c, v)).collect();
        row.sort_unstable_by_key(|&(c, _)| c);
        rows.push(row);
    }
    SparseMatrix::from_rows(ds.n(), rows)
}

/// Past/future matrices for the transition solve.
///
/// Every session of length L contributes L-1 aligned row pairs, one per
/// split point t: row t of the past matrix holds the items before the
/// split, decayed away from the last past position; the future row holds
/// the rest, decayed away from the split. Repeated items keep their
/// largest weight.
pub fn build_partial_matrices(ds: &SessionDataset, delta_pos: f64) -> (SparseMatrix, SparseMatrix) {
    let total_rows: usize = ds.sessions.iter().map(|s| s.len().saturating_sub(1)).sum();
    let mut past_rows = Vec::with_capacity(total_rows);
    let mut future_rows = Vec::with_capacity(total_rows);
    let mut scratch: HashMap<u32, f64> = HashMap::new();

    let weigh = |part: &[u32], anchor_at_start: bool, scratch: &mut HashMap<u32, f64>| {
        scratch.clear();
        let last = part.len() - 1;
        for (i, &item) in part.iter().enumerate() {
            let gap = if anchor_at_start { i } else { last - i };
            let w = position_weight(gap, delta_pos);
            let e = scratch.entry(item).or_insert(0.0);
            if w > *e {
                *e = w;
            }
        }
        let mut row: Vec<(u32, f64)> = scratch.iter().map(|(&c, &v)| (c, v)).collect();
        row.sort_unstable_by_key(|&(c, _)| c);
        row
    };

    for sess in &ds.sessions {
        for t in 1..sess.len() {
            past_rows.push(weigh(&sess[..t], false, &mut scratch));
            future_rows.push(weigh(&sess[t..], true, &mut scratch));
        }
    }
    (
        SparseMatrix::from_rows(ds.n(), past_rows),
        SparseMatrix::from_rows(ds.n(), future_rows),
    )
}
