//! Next-item evaluation under iterative revealing.
//!
//! Each test session is replayed one event at a time: after every revealed
//! prefix the model ranks the catalog, and the very next event is the
//! prediction target while every remaining event stays relevant for the
//! set-based metrics. Averages run over prediction events, not sessions.
//!
//! Hit rate and reciprocal rank grade the target's rank; recall and
//! average precision grade the whole top-k against the distinct remaining
//! items. AP normalizes by min(k, |relevant|), which is why MAP may dip as
//! k grows even though hit rate and recall never do.

use crate::corpus::{SessionDataset, Vocab};
use crate::error::{Error, Result};
use crate::recommend::{session_vector, top_n, ScoreMatrix};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::HashSet;
use std::io::Write;

/// Anything that can score a prefix of model-internal item ids (None marks
/// an item outside the model's catalog).
pub trait PrefixScorer: Sync {
    fn n_items(&self) -> usize;
    fn score_prefix(&self, prefix: &[Option<u32>]) -> Vec<f64>;
}

/// The real scorer: composed matrix plus the inference decay.
pub struct ModelScorer<'a> {
    pub matrix: ScoreMatrix<'a>,
    pub delta_inf: f64,
}

impl PrefixScorer for ModelScorer<'_> {
    fn n_items(&self) -> usize {
        self.matrix.n()
    }

    fn score_prefix(&self, prefix: &[Option<u32>]) -> Vec<f64> {
        let (sv, _) = session_vector(prefix, self.delta_inf);
        self.matrix.score(&sv)
    }
}

/// Averaged metrics at one cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CutoffMetrics {
    pub cutoff: usize,
    pub hr: f64,
    pub mrr: f64,
    pub recall: f64,
    pub map: f64,
}

/// Full evaluation outcome.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub n_items: usize,
    pub sessions: u64,
    pub events: u64,
    /// Prefixes with no in-catalog item at all; these produce no ranking.
    pub skipped_events: u64,
    pub metrics: Vec<CutoffMetrics>,
    pub wall_secs: f64,
}

impl EvalReport {
    pub fn at(&self, cutoff: usize) -> Option<&CutoffMetrics> {
        self.metrics.iter().find(|m| m.cutoff == cutoff)
    }

    /// Internal consistency: everything in [0, 1], reciprocal rank never
    /// above hit rate, hit rate and recall non-decreasing in k. (Average
    /// precision is intentionally absent from the monotonicity check; its
    /// min(k, |relevant|) normalization legitimately lets it decrease.)
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| {
            Err(Error::numeric(format!(
                "metric consistency violated: {what} = {v}"
            )))
        };
        for m in &self.metrics {
            for (name, v) in [
                ("hr", m.hr),
                ("mrr", m.mrr),
                ("recall", m.recall),
                ("map", m.map),
            ] {
                if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                    return bad(&format!("{name}@{}", m.cutoff), v);
                }
            }
            if m.mrr > m.hr + 1e-12 {
                return bad(&format!("mrr@{} above hr", m.cutoff), m.mrr);
            }
        }
        for w in self.metrics.windows(2) {
            if w[1].hr < w[0].hr - 1e-12 {
                return bad(&format!("hr@{} below hr@{}", w[1].cutoff, w[0].cutoff), w[1].hr);
            }
            if w[1].recall < w[0].recall - 1e-12 {
                return bad(
                    &format!("recall@{} below recall@{}", w[1].cutoff, w[0].cutoff),
                    w[1].recall,
                );
            }
        }
        Ok(())
    }

    /// Aligned text table, one row per cutoff.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:>7}  {:>8}  {:>8}  {:>8}  {:>8}\n",
            "cutoff", "hr", "mrr", "recall", "map"
        ));
        for m in &self.metrics {
            out.push_str(&format!(
                "{:>7}  {:>8.4}  {:>8.4}  {:>8.4}  {:>8.4}\n",
                m.cutoff, m.hr, m.mrr, m.recall, m.map
            ));
        }
        out.push_str(&format!(
            "events: {} evaluated, {} skipped, {} sessions, {:.2}s\n",
            self.events, self.skipped_events, self.sessions, self.wall_secs
        ));
        out
    }
}

/// Neumaier-compensated accumulator: summing many small per-event terms
/// stays accurate no matter how many events a corpus has.
#[derive(Debug, Clone, Copy, Default)]
struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        self.comp += if self.sum.abs() >= v.abs() {
            (self.sum - t) + v
        } else {
            (v - t) + self.sum
        };
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Per-session raw sums produced by the parallel phase. Dump rows are
/// rendered to JSON strings eagerly so the partial owns its data.
struct SessionPartial {
    // hr, mrr, recall, map per cutoff.
    sums: Vec<[f64; 4]>,
    events: u64,
    skipped: u64,
    rows: Vec<String>,
}

/// One prediction event, for the per-event dump.
#[derive(Debug, Serialize)]
struct EventRow<'a> {
    session: &'a str,
    step: usize,
    target: Option<&'a str>,
    rank: Option<usize>,
    skipped: bool,
}

/// Evaluate a scorer over a test split.
///
/// Test items map into the model's catalog by external id; unknown items
/// stay in the replay (they age the prefix and count as misses when they
/// are targets) but cannot be ranked. `per_event` receives one JSON line
/// per prediction event when given.
pub fn evaluate<S: PrefixScorer + ?Sized>(
    scorer: &S,
    model_vocab: &Vocab,
    test: &SessionDataset,
    cutoffs: &[usize],
    mut per_event: Option<&mut dyn Write>,
) -> Result<EvalReport> {
    let start = std::time::Instant::now();
    let mut cuts: Vec<usize> = cutoffs.to_vec();
    cuts.sort_unstable();
    cuts.dedup();
    if cuts.is_empty() || cuts[0] == 0 {
        return Err(Error::config(
            "need at least one positive cutoff".to_string(),
        ));
    }
    let max_cut = *cuts.last().unwrap();
    let want_rows = per_event.is_some();

    let partials: Vec<SessionPartial> = test
        .sessions
        .par_iter()
        .enumerate()
        .map(|(si, sess)| {
            let mapped: Vec<Option<u32>> = sess
                .iter()
                .map(|&it| model_vocab.get(test.vocab.external(it)))
                .collect();
            let mut part = SessionPartial {
                sums: vec![[0.0; 4]; cuts.len()],
                events: 0,
                skipped: 0,
                rows: Vec::new(),
            };
            for t in 1..sess.len() {
                let prefix = &mapped[..t];
                let skipped = prefix.iter().all(Option::is_none);
                let mut rank = None;
                if skipped {
                    part.skipped += 1;
                } else {
                    let scores = scorer.score_prefix(prefix);
                    let ranked = top_n(&scores, max_cut);
                    let target = mapped[t];
                    rank = target
                        .and_then(|tg| ranked.items.iter().position(|&i| i == tg));

                    // Distinct remaining items; unknown ones still widen
                    // the denominator because they were truly relevant.
                    let rel_count = sess[t..].iter().collect::<HashSet<_>>().len();
                    let rel_set: HashSet<u32> =
                        mapped[t..].iter().flatten().copied().collect();

                    // One pass over the ranking: cumulative relevant hits.
                    let mut rel_hits = 0usize;
                    let mut precision_sum = 0.0f64;
                    let mut ci = 0usize;
                    for (pos, &item) in ranked.items.iter().enumerate() {
                        if rel_set.contains(&item) {
                            rel_hits += 1;
                            precision_sum += rel_hits as f64 / (pos + 1) as f64;
                        }
                        while ci < cuts.len() && pos + 1 == cuts[ci] {
                            record(
                                &mut part.sums[ci],
                                rank,
                                cuts[ci],
                                rel_hits,
                                precision_sum,
                                rel_count,
                            );
                            ci += 1;
                        }
                    }
                    // Cutoffs beyond the ranked length see the full list.
                    while ci < cuts.len() {
                        record(
                            &mut part.sums[ci],
                            rank,
                            cuts[ci],
                            rel_hits,
                            precision_sum,
                            rel_count,
                        );
                        ci += 1;
                    }
                    part.events += 1;
                }
                if want_rows {
                    let row = EventRow {
                        session: &test.session_ids[si],
                        step: t,
                        target: Some(test.vocab.external(sess[t])),
                        rank: rank.map(|r| r + 1),
                        skipped,
                    };
                    part.rows
                        .push(serde_json::to_string(&row).expect("row serializes"));
                }
            }
            part
        })
        .collect();

    // Ordered, compensated reduction: identical at any thread count.
    let mut events = 0u64;
    let mut skipped = 0u64;
    let mut acc = vec![[CompensatedSum::default(); 4]; cuts.len()];
    for part in &partials {
        events += part.events;
        skipped += part.skipped;
        for (a, s) in acc.iter_mut().zip(&part.sums) {
            for (ai, &si) in a.iter_mut().zip(s) {
                ai.add(si);
            }
        }
    }
    if let Some(w) = per_event.as_deref_mut() {
        for part in &partials {
            for row in &part.rows {
                writeln!(w, "{row}").map_err(|e| {
                    Error::data(format!("cannot write per-event dump: {e}"))
                })?;
            }
        }
    }

    let denom = events.max(1) as f64;
    let metrics = cuts
        .iter()
        .enumerate()
        .map(|(ci, &cutoff)| CutoffMetrics {
            cutoff,
            hr: acc[ci][0].value() / denom,
            mrr: acc[ci][1].value() / denom,
            recall: acc[ci][2].value() / denom,
            map: acc[ci][3].value() / denom,
        })
        .collect();

    let report = EvalReport {
        n_items: scorer.n_items(),
        sessions: test.m() as u64,
        events,
        skipped_events: skipped,
        metrics,
        wall_secs: start.elapsed().as_secs_f64(),
    };
    report.validate()?;
    Ok(report)
}

#[inline]
fn record(
    sums: &mut [f64; 4],
    target_rank: Option<usize>,
    cutoff: usize,
    rel_hits: usize,
    precision_sum: f64,
    rel_count: usize,
) {
    if let Some(r) = target_rank {
        if r < cutoff {
            sums[0] += 1.0;
            sums[1] += 1.0 / (r + 1) as f64;
        }
    }
    sums[2] += rel_hits as f64 / rel_count as f64;
    sums[3] += precision_sum / cutoff.min(rel_count) as f64;
}

/// Split test sessions at `threshold` length and evaluate each side:
/// (short ≤ threshold, long > threshold).
pub fn length_bucket_report<S: PrefixScorer + ?Sized>(
    scorer: &S,
    model_vocab: &Vocab,
    test: &SessionDataset,
    cutoffs: &[usize],
    threshold: usize,
) -> Result<(EvalReport, EvalReport)> {
    let short: Vec<usize> = (0..test.m())
        .filter(|&i| test.sessions[i].len() <= threshold)
        .collect();
    let long: Vec<usize> = (0..test.m())
        .filter(|&i| test.sessions[i].len() > threshold)
        .collect();
    let short_report = evaluate(scorer, model_vocab, &test.restrict(&short), cutoffs, None)?;
    let long_report = evaluate(scorer, model_vocab, &test.restrict(&long), cutoffs, None)?;
    Ok((short_report, long_report))
}
