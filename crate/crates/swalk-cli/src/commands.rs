//! The six pipeline commands: prepare, train, prune, eval, recommend, sweep.
//!
//! Commands communicate through files. `prepare` writes a corpus plus fold
//! manifests; `train` turns one fold into a stored model; `eval`,
//! `recommend`, and `sweep` consume those artifacts. Every command is a pure
//! function of its inputs (train and prune additionally stamp a save time),
//! so reruns are idempotent.

use std::collections::HashSet;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use swalk::corpus::{
    build_binary_matrix, build_partial_matrices, chronological_split, load_events, preprocess,
    LoadOptions, LoadReport, PreprocessOptions, PreprocessReport, SessionDataset, SplitSpec,
    Vocab,
};
use swalk::error::{Error, Result};
use swalk::eval::{evaluate, CutoffMetrics, ModelScorer};
use swalk::linear::{
    baseline_ar, baseline_sr, clamp_nonnegative, mix_self_loop, row_normalize,
    solve_teleportation, solve_transition,
};
use swalk::recommend::{session_vector, top_n, ScoreMatrix};
use swalk::store::{
    load_model, prune_magnitude, prune_scores, save_model, CompositionMeta, ModelMeta,
    FORMAT_VERSION,
};
use swalk::walk::{compose_first_step, compose_kstep, compose_rwr, default_epsilon, WalkTrace};
use swalk::{DenseMatrix, Scalar, SparseScores};

use crate::config::{
    CompositionMode, Precision, RunConfig, SplitMode, TeleportationSource, TransitionSource,
};

/// One session in `corpus.jsonl`.
#[derive(Serialize, Deserialize)]
struct SessionRow {
    id: String,
    end: i64,
    items: Vec<String>,
}

#[derive(Serialize)]
struct FoldSummary {
    fold: usize,
    train_sessions: usize,
    test_sessions: usize,
}

#[derive(Serialize)]
struct PrepareSummary<'a> {
    load: &'a LoadReport,
    preprocess: &'a PreprocessReport,
    split: &'a str,
    test_window_days: f64,
    folds: Vec<FoldSummary>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Parse an event log, filter it, split it chronologically, and write the
/// corpus plus per-fold session-id manifests. Output is a pure function of
/// the input file and options, so reruns are byte-identical.
pub fn prepare(cfg: &RunConfig, events: &Path, out: &Path) -> Result<()> {
    let events_path = cfg.path(events);
    let (log, load_report) = load_events(&events_path, &LoadOptions::default())?;
    let opts = PreprocessOptions {
        min_item_support: cfg.min_item_support,
        min_session_len: cfg.min_session_len,
    };
    let (ds, prep_report) = preprocess(&log, &opts)?;

    let window = (cfg.test_window_days * 86_400.0) as i64;
    let (spec, split_name) = match cfg.split {
        SplitMode::Single => (SplitSpec::Single { test_window_secs: window }, "single"),
        SplitMode::FiveFold => (SplitSpec::FiveFold { test_window_secs: window }, "five-fold"),
    };
    let folds = chronological_split(&ds, spec)?;

    let dir = cfg.path(out);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let mut corpus = Vec::new();
    for i in 0..ds.m() {
        let row = SessionRow {
            id: ds.session_ids[i].clone(),
            end: ds.end_times[i],
            items: ds.sessions[i]
                .iter()
                .map(|&it| ds.vocab.external(it).to_string())
                .collect(),
        };
        serde_json::to_writer(&mut corpus, &row).map_err(|e| Error::data(e.to_string()))?;
        corpus.push(b'\n');
    }
    write_file(&dir.join("corpus.jsonl"), &corpus)?;

    let mut summaries = Vec::new();
    for (i, (train, test)) in folds.iter().enumerate() {
        let manifest = |ids: &[String]| {
            let mut s = ids.join("\n");
            s.push('\n');
            s
        };
        write_file(
            &dir.join(format!("fold{i}.train.txt")),
            manifest(&train.session_ids).as_bytes(),
        )?;
        write_file(
            &dir.join(format!("fold{i}.test.txt")),
            manifest(&test.session_ids).as_bytes(),
        )?;
        summaries.push(FoldSummary {
            fold: i,
            train_sessions: train.m(),
            test_sessions: test.m(),
        });
    }

    let summary = PrepareSummary {
        load: &load_report,
        preprocess: &prep_report,
        split: split_name,
        test_window_days: cfg.test_window_days,
        folds: summaries,
    };
    let mut json =
        serde_json::to_string_pretty(&summary).map_err(|e| Error::data(e.to_string()))?;
    json.push('\n');
    write_file(&dir.join("prepare.json"), json.as_bytes())?;

    println!(
        "prepared {} sessions over {} items into {} ({} fold{})",
        ds.m(),
        ds.n(),
        dir.display(),
        folds.len(),
        if folds.len() == 1 { "" } else { "s" }
    );
    Ok(())
}

/// Rebuild the full dataset from a prepared directory.
fn load_prepared(dir: &Path) -> Result<SessionDataset> {
    let path = dir.join("corpus.jsonl");
    if !path.is_file() {
        return Err(Error::config(format!(
            "{} not found; run prepare first",
            path.display()
        )));
    }
    let mut rows: Vec<SessionRow> = Vec::new();
    for (lineno, line) in read_lines(&path)?.iter().enumerate() {
        if line.is_empty() {
            continue;
        }
        let row: SessionRow = serde_json::from_str(line).map_err(|e| {
            Error::data(format!("{} line {}: {e}", path.display(), lineno + 1))
        })?;
        rows.push(row);
    }
    // from_ids sorts and dedups, reproducing the lexicographic internal ids
    // the corpus was written with.
    let vocab = Vocab::from_ids(rows.iter().flat_map(|r| r.items.iter().cloned()));
    let sessions = rows
        .iter()
        .map(|r| r.items.iter().map(|it| vocab.get(it).unwrap()).collect())
        .collect();
    Ok(SessionDataset {
        sessions,
        session_ids: rows.iter().map(|r| r.id.clone()).collect(),
        end_times: rows.iter().map(|r| r.end).collect(),
        vocab,
    })
}

/// Restrict the corpus to the sessions named in one fold manifest.
fn load_fold_side(ds: &SessionDataset, dir: &Path, fold: usize, side: &str) -> Result<SessionDataset> {
    let path = dir.join(format!("fold{fold}.{side}.txt"));
    if !path.is_file() {
        return Err(Error::config(format!(
            "{} not found; check --fold against the prepared split",
            path.display()
        )));
    }
    let want: HashSet<String> = read_lines(&path)?
        .into_iter()
        .filter(|l| !l.is_empty())
        .collect();
    let keep: Vec<usize> = (0..ds.m())
        .filter(|&i| want.contains(&ds.session_ids[i]))
        .collect();
    if keep.len() != want.len() {
        return Err(Error::data(format!(
            "{} names {} sessions but only {} are in the corpus",
            path.display(),
            want.len(),
            keep.len()
        )));
    }
    Ok(ds.restrict(&keep))
}

fn build_transition(ds: &SessionDataset, cfg: &RunConfig) -> Result<DenseMatrix<f64>> {
    match cfg.transition {
        TransitionSource::Ours => {
            let (past, future) = build_partial_matrices(ds, cfg.hyper.delta_pos);
            let mut r = solve_transition(&past, &future, cfg.hyper.lambda)?;
            clamp_nonnegative(&mut r);
            row_normalize(&mut r)?;
            Ok(r)
        }
        TransitionSource::Sr => baseline_sr(ds, cfg.sr_window),
        TransitionSource::Identity => Ok(DenseMatrix::identity(ds.n())),
    }
}

/// Teleportation matrix before the self-loop mix, so sweep can re-mix per
/// beta without re-solving.
fn build_teleportation_unmixed(ds: &SessionDataset, cfg: &RunConfig) -> Result<DenseMatrix<f64>> {
    match cfg.teleportation {
        TeleportationSource::Ours => {
            let x = build_binary_matrix(ds, None);
            let mut t = solve_teleportation(&x, cfg.hyper.lambda, cfg.hyper.xi)?;
            clamp_nonnegative(&mut t);
            row_normalize(&mut t)?;
            Ok(t)
        }
        TeleportationSource::Ar => baseline_ar(ds),
        TeleportationSource::Identity => Ok(DenseMatrix::identity(ds.n())),
    }
}

fn build_teleportation(ds: &SessionDataset, cfg: &RunConfig) -> Result<DenseMatrix<f64>> {
    let mut t = build_teleportation_unmixed(ds, cfg)?;
    if cfg.teleportation != TeleportationSource::Identity {
        mix_self_loop(&mut t, cfg.hyper.beta);
    }
    Ok(t)
}

fn compose_and_prune<T: Scalar>(
    r: &DenseMatrix<T>,
    t: &DenseMatrix<T>,
    cfg: &RunConfig,
) -> Result<(SparseScores, CompositionMeta, Option<WalkTrace>)> {
    let n = r.n();
    match cfg.composition {
        CompositionMode::Rwr => {
            let eps = cfg.epsilon.unwrap_or_else(|| default_epsilon(n));
            let (m, trace) = compose_rwr(r, t, cfg.hyper.alpha, Some(eps), cfg.max_steps)?;
            let scores = prune_magnitude(&m, cfg.keep_ratio)?;
            let meta = CompositionMeta {
                mode: "rwr".to_string(),
                k: None,
                epsilon: Some(eps),
                max_steps: Some(cfg.max_steps),
                steps_run: Some(trace.steps_taken),
                converged: Some(trace.converged),
            };
            Ok((scores, meta, Some(trace)))
        }
        CompositionMode::Kstep => {
            let m = compose_kstep(r, cfg.k)?;
            let scores = prune_magnitude(&m, cfg.keep_ratio)?;
            let meta = CompositionMeta {
                mode: "kstep".to_string(),
                k: Some(cfg.k),
                epsilon: None,
                max_steps: None,
                steps_run: None,
                converged: None,
            };
            Ok((scores, meta, None))
        }
        CompositionMode::FirstStep => {
            let m = compose_first_step(r, t, cfg.hyper.alpha)?;
            let scores = prune_magnitude(&m, cfg.keep_ratio)?;
            let meta = CompositionMeta {
                mode: "first-step".to_string(),
                k: None,
                epsilon: None,
                max_steps: None,
                steps_run: None,
                converged: None,
            };
            Ok((scores, meta, None))
        }
    }
}

fn now_unix() -> i64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs() as i64)
        .unwrap_or(0)
}

/// Fit both models on one training fold, compose, prune, and save.
pub fn train(
    cfg: &RunConfig,
    prepared: &Path,
    fold: usize,
    model: &Path,
    trace_out: Option<&Path>,
) -> Result<()> {
    cfg.hyper.validate()?;
    let dir = cfg.path(prepared);
    let ds = load_prepared(&dir)?;
    let train_ds = load_fold_side(&ds, &dir, fold, "train")?;

    let r = build_transition(&train_ds, cfg)?;
    let t = build_teleportation(&train_ds, cfg)?;

    let (scores, composition, trace) = match cfg.precision {
        Precision::F64 => compose_and_prune(&r, &t, cfg)?,
        Precision::F32 => {
            let r32: DenseMatrix<f32> = r.convert();
            let t32: DenseMatrix<f32> = t.convert();
            compose_and_prune(&r32, &t32, cfg)?
        }
    };

    if let Some(tp) = trace_out {
        match &trace {
            Some(trace) => {
                let mut json = serde_json::to_string_pretty(trace)
                    .map_err(|e| Error::data(e.to_string()))?;
                json.push('\n');
                write_file(&cfg.path(tp), json.as_bytes())?;
            }
            None => eprintln!("warning: --trace is only produced by rwr composition; skipping"),
        }
    }

    let steps_note = match (&composition.steps_run, &composition.converged) {
        (Some(s), Some(true)) => format!(", converged in {s} step(s)"),
        (Some(s), Some(false)) => format!(", stopped at {s} step(s) without converging"),
        _ => String::new(),
    };

    let meta = ModelMeta {
        version: FORMAT_VERSION,
        n: train_ds.n() as u64,
        nnz: scores.nnz() as u64,
        hyper: cfg.hyper,
        composition,
        transition: cfg.transition.name().to_string(),
        teleportation: cfg.teleportation.name().to_string(),
        precision: cfg.precision.name().to_string(),
        keep_ratio: cfg.keep_ratio,
        vocab: train_ds.vocab.ids().to_vec(),
        created_unix: now_unix(),
    };
    let base = cfg.path(model);
    save_model(&base, &meta, &scores)?;
    println!(
        "trained {}/{} {} model on fold {fold}: n = {}, nnz = {}{steps_note}; saved to {}",
        meta.transition,
        meta.teleportation,
        meta.composition.mode,
        meta.n,
        meta.nnz,
        base.display()
    );
    Ok(())
}

/// Re-prune a stored model to a smaller entry budget.
pub fn prune(cfg: &RunConfig, model: &Path, out: &Path, keep_ratio: f64) -> Result<()> {
    let (mut meta, scores) = load_model(&cfg.path(model))?;
    let pruned = prune_scores(&scores, keep_ratio)?;
    meta.nnz = pruned.nnz() as u64;
    meta.keep_ratio = keep_ratio;
    meta.created_unix = now_unix();
    let base = cfg.path(out);
    save_model(&base, &meta, &pruned)?;
    println!(
        "pruned {} -> {} entries (keep_ratio {keep_ratio}); saved to {}",
        scores.nnz(),
        pruned.nnz(),
        base.display()
    );
    Ok(())
}

/// A delta-inf override arrives outside HyperParams::validate, so check it
/// at the door; zero would put NaN weights into every session vector.
fn check_delta_inf(v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::config(format!("delta_inf must be positive, got {v}")))
    }
}

/// Count how many test events fall outside the model catalog.
fn oov_share(test: &SessionDataset, model_vocab: &Vocab) -> (usize, usize) {
    let total = test.total_events();
    let known = test
        .sessions
        .iter()
        .flatten()
        .filter(|&&it| model_vocab.get(test.vocab.external(it)).is_some())
        .count();
    (total - known, total)
}

/// Replay one test fold against a stored model and report ranking metrics.
pub fn eval(
    cfg: &RunConfig,
    prepared: &Path,
    fold: usize,
    model: &Path,
    delta_inf: Option<f64>,
    out: Option<&Path>,
    per_event: Option<&Path>,
) -> Result<()> {
    let dir = cfg.path(prepared);
    let ds = load_prepared(&dir)?;
    let test = load_fold_side(&ds, &dir, fold, "test")?;
    let (meta, scores) = load_model(&cfg.path(model))?;
    let model_vocab = Vocab::from_ids(meta.vocab.iter().cloned());

    let (oov, total) = oov_share(&test, &model_vocab);
    if total > 0 && oov * 2 > total {
        return Err(Error::data(format!(
            "{oov} of {total} test events are outside the model catalog; \
             the model and the prepared corpus look unrelated"
        )));
    }

    let scorer = ModelScorer {
        matrix: ScoreMatrix::Sparse(&scores),
        delta_inf: check_delta_inf(delta_inf.unwrap_or(meta.hyper.delta_inf))?,
    };

    let mut pe_writer: Option<BufWriter<std::fs::File>> = match per_event {
        Some(p) => {
            let path = cfg.path(p);
            let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            Some(BufWriter::new(f))
        }
        None => None,
    };
    let report = evaluate(
        &scorer,
        &model_vocab,
        &test,
        &cfg.cutoffs,
        pe_writer.as_mut().map(|w| w as &mut dyn Write),
    )?;
    if let Some(mut w) = pe_writer {
        w.flush().map_err(|e| Error::io(per_event.unwrap(), e))?;
    }
    report.validate()?;

    eprintln!("{}", report.render_table());
    let mut json =
        serde_json::to_string_pretty(&report).map_err(|e| Error::data(e.to_string()))?;
    json.push('\n');
    match out {
        Some(p) => write_file(&cfg.path(p), json.as_bytes())?,
        None => print!("{json}"),
    }
    Ok(())
}

#[derive(Serialize)]
struct Recommendation<'a> {
    input: Vec<&'a str>,
    items: Vec<String>,
    scores: Vec<f64>,
}

/// Score session prefixes from a file or stdin, one JSON line each.
pub fn recommend(
    cfg: &RunConfig,
    model: &Path,
    input: Option<&Path>,
    top: usize,
    delta_inf: Option<f64>,
) -> Result<()> {
    let (meta, scores) = load_model(&cfg.path(model))?;
    let vocab = Vocab::from_ids(meta.vocab.iter().cloned());
    let matrix = ScoreMatrix::Sparse(&scores);
    let delta_inf = check_delta_inf(delta_inf.unwrap_or(meta.hyper.delta_inf))?;

    let reader: Box<dyn BufRead> = match input {
        Some(p) => {
            let path = cfg.path(p);
            let f = std::fs::File::open(&path).map_err(|e| {
                if e.kind() == std::io::ErrorKind::NotFound {
                    Error::config(format!("input file not found: {}", path.display()))
                } else {
                    Error::io(&path, e)
                }
            })?;
            Box::new(std::io::BufReader::new(f))
        }
        None => Box::new(std::io::BufReader::new(std::io::stdin())),
    };

    let stdout = std::io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    for line in reader.lines() {
        let line = line.map_err(|e| Error::data(format!("cannot read input: {e}")))?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        let prefix: Vec<Option<u32>> = tokens.iter().map(|t| vocab.get(t)).collect();
        let unknown: Vec<&str> = tokens
            .iter()
            .zip(&prefix)
            .filter(|(_, p)| p.is_none())
            .map(|(t, _)| *t)
            .collect();
        if !unknown.is_empty() {
            eprintln!("warning: ignoring unknown item(s): {}", unknown.join(" "));
        }
        let (sv, _) = session_vector(&prefix, delta_inf);
        let ranked = top_n(&matrix.score(&sv), top);
        let rec = Recommendation {
            input: tokens,
            items: ranked
                .items
                .iter()
                .map(|&i| vocab.external(i).to_string())
                .collect(),
            scores: ranked.scores,
        };
        serde_json::to_writer(&mut out, &rec).map_err(|e| Error::data(e.to_string()))?;
        out.write_all(b"\n")
            .map_err(|e| Error::data(format!("cannot write output: {e}")))?;
    }
    out.flush()
        .map_err(|e| Error::data(format!("cannot write output: {e}")))?;
    Ok(())
}

#[derive(Serialize)]
struct SweepRow<'a> {
    alpha: f64,
    beta: f64,
    delta_inf: f64,
    steps: usize,
    converged: bool,
    metrics: &'a [CutoffMetrics],
}

/// Grid-search alpha, beta, and delta-inf over one fold with the walk
/// composition. Both linear solves run once; each beta re-mixes the
/// teleportation matrix and each alpha re-runs only the walk.
pub fn sweep(
    cfg: &RunConfig,
    prepared: &Path,
    fold: usize,
    alphas: &[f64],
    betas: &[f64],
    delta_infs: &[f64],
    out: Option<&Path>,
) -> Result<()> {
    cfg.hyper.validate()?;
    let dir = cfg.path(prepared);
    let ds = load_prepared(&dir)?;
    let train_ds = load_fold_side(&ds, &dir, fold, "train")?;
    let test = load_fold_side(&ds, &dir, fold, "test")?;

    let r = build_transition(&train_ds, cfg)?;
    let t_unmixed = build_teleportation_unmixed(&train_ds, cfg)?;
    let eps = cfg.epsilon.unwrap_or_else(|| default_epsilon(train_ds.n()));

    let one = |v: f64| vec![v];
    let alphas = if alphas.is_empty() { one(cfg.hyper.alpha) } else { alphas.to_vec() };
    let betas = if betas.is_empty() { one(cfg.hyper.beta) } else { betas.to_vec() };
    let delta_infs = if delta_infs.is_empty() {
        one(cfg.hyper.delta_inf)
    } else {
        delta_infs.to_vec()
    };
    // Reject a bad grid value before any work or output happens.
    for &alpha in &alphas {
        let mut probe = cfg.hyper;
        probe.alpha = alpha;
        probe.validate()?;
    }
    for &beta in &betas {
        let mut probe = cfg.hyper;
        probe.beta = beta;
        probe.validate()?;
    }
    for &d in &delta_infs {
        check_delta_inf(d)?;
    }

    let mut writer: Box<dyn Write> = match out {
        Some(p) => {
            let path = cfg.path(p);
            let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            Box::new(BufWriter::new(f))
        }
        None => Box::new(BufWriter::new(std::io::stdout())),
    };

    for &beta in &betas {
        let mut t = t_unmixed.clone();
        if cfg.teleportation != TeleportationSource::Identity {
            mix_self_loop(&mut t, beta);
        }
        for &alpha in &alphas {
            let (m, trace) = compose_rwr(&r, &t, alpha, Some(eps), cfg.max_steps)?;
            for &delta_inf in &delta_infs {
                let scorer = ModelScorer {
                    matrix: ScoreMatrix::DenseF64(&m),
                    delta_inf,
                };
                let report = evaluate(&scorer, &train_ds.vocab, &test, &cfg.cutoffs, None)?;
                let row = SweepRow {
                    alpha,
                    beta,
                    delta_inf,
                    steps: trace.steps_taken,
                    converged: trace.converged,
                    metrics: &report.metrics,
                };
                serde_json::to_writer(&mut writer, &row)
                    .map_err(|e| Error::data(e.to_string()))?;
                writer
                    .write_all(b"\n")
                    .map_err(|e| Error::data(format!("cannot write output: {e}")))?;
            }
        }
    }
    writer
        .flush()
        .map_err(|e| Error::data(format!("cannot write output: {e}")))?;
    Ok(())
}
