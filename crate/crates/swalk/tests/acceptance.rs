//! End-to-end acceptance gates for the whole pipeline, from solver
//! equivalence against independent oracles up to behavioral properties on
//! a planted synthetic corpus. Every gate prints one PASS/FAIL line.
//!
//! Gates 4–7 share one trained context (corpus, solved matrices, composed
//! model) built lazily behind a `OnceLock`; the build itself is timed and
//! judged by gate 4.

use std::sync::OnceLock;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use swalk::corpus::{
    build_binary_matrix, build_partial_matrices, chronological_split, preprocess,
    PreprocessOptions, SessionDataset, SplitSpec, Vocab,
};
use swalk::eval::{evaluate, ModelScorer, PrefixScorer};
use swalk::hyper::{HyperParams, Profile};
use swalk::linear::{
    baseline_sr, clamp_nonnegative, mix_self_loop, row_normalize, solve_teleportation,
    solve_transition,
};
use swalk::recommend::ScoreMatrix;
use swalk::sparse::{SparseMatrix, SparseScores};
use swalk::store::{
    entries_path, load_model, meta_path, prune_magnitude, save_model, CompositionMeta, ModelMeta,
    FORMAT_VERSION,
};
use swalk::synth::{generate, SynthConfig};
use swalk::walk::{compose_kstep, compose_rwr, WalkTrace, DEFAULT_MAX_STEPS};
use swalk::DenseMatrix;

/// Print the verdict line for one gate, then fail the test if it did not
/// hold.
fn gate(number: u32, ok: bool, detail: &str) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    println!("criterion {number:02} {verdict} — {detail}");
    assert!(ok, "criterion {number:02} failed — {detail}");
}

fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

// ---------------------------------------------------------------------------
// Independent oracles: naive, self-contained, sharing no code with the
// library paths they check.

/// Gauss-Jordan solve with partial pivoting: returns A⁻¹·RHS.
fn gauss_jordan(a: &[Vec<f64>], rhs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let w = rhs[0].len();
    let mut aug: Vec<Vec<f64>> = a
        .iter()
        .zip(rhs)
        .map(|(ar, rr)| ar.iter().chain(rr).copied().collect())
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| aug[x][col].abs().partial_cmp(&aug[y][col].abs()).unwrap())
            .unwrap();
        aug.swap(col, piv);
        let pv = aug[col][col];
        assert!(pv != 0.0, "singular oracle system");
        for row in 0..n {
            if row == col {
                continue;
            }
            let f = aug[row][col] / pv;
            if f != 0.0 {
                let (src, dst) = if row < col {
                    let (lo, hi) = aug.split_at_mut(col);
                    (&hi[0], &mut lo[row])
                } else {
                    let (lo, hi) = aug.split_at_mut(row);
                    (&lo[col], &mut hi[0])
                };
                for k in col..n + w {
                    dst[k] -= f * src[k];
                }
            }
        }
    }
    (0..n)
        .map(|i| (0..w).map(|j| aug[i][n + j] / aug[i][i]).collect())
        .collect()
}

/// Dense n×n matrix product, scalar loops only.
fn naive_matmul(a: &DenseMatrix<f64>, b: &DenseMatrix<f64>) -> DenseMatrix<f64> {
    let n = a.n();
    let mut c = DenseMatrix::zeros(n);
    for i in 0..n {
        for k in 0..n {
            let aik = a.get(i, k);
            if aik != 0.0 {
                for j in 0..n {
                    c.set(i, j, c.get(i, j) + aik * b.get(k, j));
                }
            }
        }
    }
    c
}

/// One reproducible solver instance: sparse weighted interaction rows.
fn instance_rows(m: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..m)
        .map(|_| {
            (0..n)
                .map(|_| {
                    if rng.random_bool(0.08) {
                        rng.random_range(0.05..1.0)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

fn rows_to_sparse(rows: &[Vec<f64>], n: usize) -> SparseMatrix {
    SparseMatrix::from_rows(
        n,
        rows.iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(c, &v)| (c as u32, v))
                    .collect()
            })
            .collect(),
    )
}

/// λ-regularized Gram matrix as plain rows, for the oracles.
fn gram_plus_lambda(rows: &[Vec<f64>], n: usize, lambda: f64) -> Vec<Vec<f64>> {
    let mut g = vec![vec![0.0; n]; n];
    for row in rows {
        for i in 0..n {
            if row[i] != 0.0 {
                for j in 0..n {
                    g[i][j] += row[i] * row[j];
                }
            }
        }
    }
    for (i, row) in g.iter_mut().enumerate() {
        row[i] += lambda;
    }
    g
}

fn identity_rows(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| f64::from(i == j)).collect())
        .collect()
}

/// The 50 solver instances shared by gates 1 and 2.
fn solver_instances() -> Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>, usize, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let lambdas = [0.1, 1.0, 10.0];
    (0..50)
        .map(|i| {
            let n = rng.random_range(20..=200);
            let m = rng.random_range(n..=500);
            let past = instance_rows(m, n, &mut rng);
            let future = instance_rows(m, n, &mut rng);
            (past, future, n, lambdas[i % lambdas.len()])
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Shared synthetic-corpus context for gates 4–7.

struct Ctx {
    train: SessionDataset,
    test: SessionDataset,
    hp: HyperParams,
    r: DenseMatrix<f64>,
    t: DenseMatrix<f64>,
    m: DenseMatrix<f64>,
    trace: WalkTrace,
    train_secs: f64,
    recall_full: f64,
}

static CTX: OnceLock<Ctx> = OnceLock::new();

/// Solve and normalize both linear models for a training split.
fn train_matrices(
    train: &SessionDataset,
    hp: &HyperParams,
) -> (DenseMatrix<f64>, DenseMatrix<f64>) {
    let (y, z) = build_partial_matrices(train, hp.delta_pos);
    let mut r = solve_transition(&y, &z, hp.lambda).unwrap();
    clamp_nonnegative(&mut r);
    row_normalize(&mut r).unwrap();

    let x = build_binary_matrix(train, None);
    let mut t = solve_teleportation(&x, hp.lambda, hp.xi).unwrap();
    clamp_nonnegative(&mut t);
    row_normalize(&mut t).unwrap();
    mix_self_loop(&mut t, hp.beta);
    (r, t)
}

fn split_corpus(seed: u64) -> (SessionDataset, SessionDataset) {
    let cfg = SynthConfig {
        seed,
        ..SynthConfig::default()
    };
    let log = generate(&cfg).unwrap();
    let (ds, _) = preprocess(&log, &PreprocessOptions::default()).unwrap();
    let mut splits = chronological_split(
        &ds,
        SplitSpec::Single {
            test_window_secs: 86_400,
        },
    )
    .unwrap();
    splits.pop().unwrap()
}

fn recall20(matrix: ScoreMatrix, vocab: &Vocab, test: &SessionDataset, delta_inf: f64) -> f64 {
    let scorer = ModelScorer { matrix, delta_inf };
    let rep = evaluate(&scorer, vocab, test, &[20], None).unwrap();
    rep.at(20).unwrap().recall
}

fn ctx() -> &'static Ctx {
    CTX.get_or_init(|| {
        let (train, test) = split_corpus(1);
        let hp = Profile::Yoochoose.params();

        let start = Instant::now();
        let (r, t) = train_matrices(&train, &hp);
        let (m, trace) = compose_rwr(&r, &t, hp.alpha, None, DEFAULT_MAX_STEPS).unwrap();
        let train_secs = start.elapsed().as_secs_f64();

        let recall_full = recall20(ScoreMatrix::DenseF64(&m), &train.vocab, &test, hp.delta_inf);
        println!(
            "context: {} train / {} test sessions, {} items, {} walk steps \
             (residuals {:?}), trained in {train_secs:.1}s, R@20 {recall_full:.4}",
            train.m(),
            test.m(),
            train.n(),
            trace.steps_taken,
            trace.residuals.iter().map(|&r| round4(r)).collect::<Vec<_>>(),
        );
        Ctx {
            train,
            test,
            hp,
            r,
            t,
            m,
            trace,
            train_secs,
            recall_full,
        }
    })
}

// ---------------------------------------------------------------------------
// Gate 1: transition solver vs naive ridge oracle.

#[test]
fn criterion_01_transition_solver_matches_ridge_oracle() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for (past, future, n, lambda) in solver_instances() {
        // Oracle: (YᵀY + λI)⁻¹ (YᵀZ) by Gauss-Jordan.
        let g = gram_plus_lambda(&past, n, lambda);
        let mut ytz = vec![vec![0.0; n]; n];
        for (pr, fr) in past.iter().zip(&future) {
            for i in 0..n {
                if pr[i] != 0.0 {
                    for j in 0..n {
                        ytz[i][j] += pr[i] * fr[j];
                    }
                }
            }
        }
        let oracle = gauss_jordan(&g, &ytz);

        let b = solve_transition(&rows_to_sparse(&past, n), &rows_to_sparse(&future, n), lambda)
            .unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..n {
            for j in 0..n {
                num += (b.get(i, j) - oracle[i][j]).powi(2);
                den += oracle[i][j].powi(2);
            }
        }
        worst = worst.max((num / den).sqrt());
    }
    let secs = start.elapsed().as_secs_f64();
    gate(
        1,
        worst <= 1e-8 && secs < 10.0,
        &format!("50 instances, worst relative error {worst:.2e}, {secs:.1}s"),
    );
}

// ---------------------------------------------------------------------------
// Gate 2: teleportation solver vs independent closed forms.

#[test]
fn criterion_02_teleportation_matches_closed_forms() {
    let mut worst_zero = 0.0f64;
    let mut worst_diag = 0.0f64;
    let mut worst_inf = 0.0f64;
    for (x, _, n, lambda) in solver_instances() {
        let g = gram_plus_lambda(&x, n, lambda);
        let p = gauss_jordan(&g, &identity_rows(n));
        let xs = rows_to_sparse(&x, n);

        // A zero diagonal cap equals the zero-diagonal autoencoder closed
        // form B = I − P·diag(1 ⊘ diag(P)).
        let b = solve_teleportation(&xs, lambda, 0.0).unwrap();
        for i in 0..n {
            for j in 0..n {
                let want = f64::from(i == j) - p[i][j] / p[j][j];
                worst_zero = worst_zero.max((b.get(i, j) - want).abs());
            }
            worst_diag = worst_diag.max(b.get(i, i).abs());
        }

        // An infinite cap removes the constraint: plain ridge B = I − λP.
        let b = solve_teleportation(&xs, lambda, f64::INFINITY).unwrap();
        for i in 0..n {
            for j in 0..n {
                let want = f64::from(i == j) - lambda * p[i][j];
                worst_inf = worst_inf.max((b.get(i, j) - want).abs());
            }
        }
    }
    gate(
        2,
        worst_zero <= 1e-10 && worst_diag <= 1e-9 && worst_inf <= 1e-10,
        &format!(
            "capped form off by {worst_zero:.2e}, diagonal {worst_diag:.2e}, \
             uncapped form off by {worst_inf:.2e}"
        ),
    );
}

// ---------------------------------------------------------------------------
// Gate 3: restart-walk iterates match the closed expansion
// αᵏRᵏ + Σ_{j<k} αʲ(1−α)TRʲ, and residuals contract at least as fast as α.

#[test]
fn criterion_03_iterates_match_expansion_and_contract() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    let mut worst_ratio = 0.0f64;
    for _ in 0..20 {
        let n = rng.random_range(10..=100);
        let mut random_stochastic = || {
            let mut m = DenseMatrix::<f64>::zeros(n);
            for i in 0..n {
                let row = m.row_mut(i);
                let mut sum = 0.0;
                for v in row.iter_mut() {
                    *v = rng.random_range(0.01..1.0);
                    sum += *v;
                }
                for v in row.iter_mut() {
                    *v /= sum;
                }
            }
            m
        };
        let r = random_stochastic();
        let t = random_stochastic();

        // R^j and T·R^j for j ≤ 6, by naive products.
        let mut rpow = vec![DenseMatrix::<f64>::identity(n)];
        let mut tpow = vec![t.clone()];
        for j in 1..=6 {
            rpow.push(naive_matmul(&rpow[j - 1], &r));
            tpow.push(naive_matmul(&t, &rpow[j]));
        }

        for alpha in [0.3f64, 0.5, 0.7] {
            for k in 1..=6usize {
                let mut expect = DenseMatrix::<f64>::zeros(n);
                for j in 0..k {
                    let coef = alpha.powi(j as i32) * (1.0 - alpha);
                    for (e, v) in expect.data_mut().iter_mut().zip(tpow[j].data()) {
                        *e += coef * v;
                    }
                }
                let ak = alpha.powi(k as i32);
                for (e, v) in expect.data_mut().iter_mut().zip(rpow[k].data()) {
                    *e += ak * v;
                }

                let (got, trace) = compose_rwr(&r, &t, alpha, Some(f64::MIN_POSITIVE), k).unwrap();
                assert_eq!(trace.steps_taken, k);
                worst = worst.max(got.l1_diff(&expect));
                if k == 6 {
                    for w in trace.residuals.windows(2) {
                        if w[0] > 1e-12 {
                            worst_ratio = worst_ratio.max(w[1] / (alpha * w[0]));
                        }
                    }
                }
            }
        }
    }
    gate(
        3,
        worst <= 1e-10 && worst_ratio <= 1.1,
        &format!(
            "iterates off the closed expansion by {worst:.2e}, \
             worst residual ratio {worst_ratio:.3}×α"
        ),
    );
}

// ---------------------------------------------------------------------------
// Gate 4: few-step convergence and training time on the planted corpus.

#[test]
fn criterion_04_composition_converges_in_few_steps() {
    let c = ctx();
    let steps = c.trace.steps_taken;
    gate(
        4,
        c.trace.converged && (3..=5).contains(&steps) && c.train_secs < 300.0,
        &format!(
            "converged {} in {steps} steps (residuals {:?}), trained in {:.1}s",
            c.trace.converged,
            c.trace.residuals.iter().map(|&r| round4(r)).collect::<Vec<_>>(),
            c.train_secs
        ),
    );
}

// ---------------------------------------------------------------------------
// Gate 5: magnitude pruning at 1% barely moves R@20; random pruning at the
// same budget hurts more.

#[test]
fn criterion_05_magnitude_pruning_beats_random_pruning() {
    let c = ctx();
    let n = c.m.n();
    let pruned = prune_magnitude(&c.m, 0.01).unwrap();
    let recall_pruned = recall20(
        ScoreMatrix::Sparse(&pruned),
        &c.train.vocab,
        &c.test,
        c.hp.delta_inf,
    );

    // Control: keep the same number of entries chosen uniformly at random.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut picked = rand::seq::index::sample(&mut rng, n * n, pruned.nnz()).into_vec();
    picked.sort_unstable();
    let entries: Vec<(u32, u32, f64)> = picked
        .into_iter()
        .map(|idx| {
            let (i, j) = (idx / n, idx % n);
            (i as u32, j as u32, c.m.get(i, j))
        })
        .collect();
    let random = SparseScores::from_sorted_entries(n, &entries).unwrap();
    let recall_random = recall20(
        ScoreMatrix::Sparse(&random),
        &c.train.vocab,
        &c.test,
        c.hp.delta_inf,
    );

    let drop_mag = (c.recall_full - recall_pruned) / c.recall_full;
    let drop_rand = (c.recall_full - recall_random) / c.recall_full;
    gate(
        5,
        drop_mag <= 0.05 && drop_rand > drop_mag,
        &format!(
            "R@20 full {:.4}; keep-largest-1% {recall_pruned:.4} ({:+.2}% drop); \
             keep-random-1% {recall_random:.4} ({:+.2}% drop)",
            c.recall_full,
            drop_mag * 100.0,
            drop_rand * 100.0
        ),
    );
}

// ---------------------------------------------------------------------------
// Gate 6: plain k-hop landing probabilities peak at one hop and lose to the
// converged restart walk everywhere past it.

#[test]
fn criterion_06_restart_walk_beats_plain_hops() {
    let c = ctx();
    let recalls: Vec<f64> = (1..=5)
        .map(|k| {
            let rk = compose_kstep(&c.r, k).unwrap();
            recall20(
                ScoreMatrix::DenseF64(&rk),
                &c.train.vocab,
                &c.test,
                c.hp.delta_inf,
            )
        })
        .collect();
    let peak_at_one = (1..5).all(|i| recalls[i] < recalls[0]);
    let degrades = (1..4).all(|i| recalls[i + 1] <= recalls[i]);
    let rwr_wins = (1..5).all(|i| c.recall_full > recalls[i]);
    gate(
        6,
        peak_at_one && degrades && rwr_wins,
        &format!(
            "k-hop R@20 {:?} vs restart walk {:.4}",
            recalls.iter().map(|&r| round4(r)).collect::<Vec<_>>(),
            c.recall_full
        ),
    );
}

// ---------------------------------------------------------------------------
// Gate 7: both learned models earn their keep against substitutes (gap-decay
// sequential rules for the transition side, the identity for the
// teleportation side), as 3-seed means of R@20.

/// R@20 for (learned/learned, sequential-rules/learned, learned/identity).
fn three_way(
    train: &SessionDataset,
    test: &SessionDataset,
    hp: &HyperParams,
    r: &DenseMatrix<f64>,
    t: &DenseMatrix<f64>,
    full: Option<f64>,
) -> (f64, f64, f64) {
    let oo = full.unwrap_or_else(|| {
        let (m, _) = compose_rwr(r, t, hp.alpha, None, DEFAULT_MAX_STEPS).unwrap();
        recall20(ScoreMatrix::DenseF64(&m), &train.vocab, test, hp.delta_inf)
    });

    let r_sr = baseline_sr(train, 10).unwrap();
    let (m_so, _) = compose_rwr(&r_sr, t, hp.alpha, None, DEFAULT_MAX_STEPS).unwrap();
    let so = recall20(ScoreMatrix::DenseF64(&m_so), &train.vocab, test, hp.delta_inf);
    drop((m_so, r_sr));

    let t_id = DenseMatrix::<f64>::identity(r.n());
    let (m_oi, _) = compose_rwr(r, &t_id, hp.alpha, None, DEFAULT_MAX_STEPS).unwrap();
    let oi = recall20(ScoreMatrix::DenseF64(&m_oi), &train.vocab, test, hp.delta_inf);
    (oo, so, oi)
}

#[test]
fn criterion_07_learned_models_beat_substitutes() {
    let mut oo_all = Vec::new();
    let mut so_all = Vec::new();
    let mut oi_all = Vec::new();
    for seed in [1u64, 2, 3] {
        let (oo, so, oi) = if seed == 1 {
            let c = ctx();
            three_way(&c.train, &c.test, &c.hp, &c.r, &c.t, Some(c.recall_full))
        } else {
            let (train, test) = split_corpus(seed);
            let hp = Profile::Yoochoose.params();
            let (r, t) = train_matrices(&train, &hp);
            three_way(&train, &test, &hp, &r, &t, None)
        };
        println!(
            "  seed {seed}: learned/learned {oo:.4}, sequential/learned {so:.4}, \
             learned/identity {oi:.4}"
        );
        oo_all.push(oo);
        so_all.push(so);
        oi_all.push(oi);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (oo, so, oi) = (mean(&oo_all), mean(&so_all), mean(&oi_all));
    gate(
        7,
        oo >= so && oo >= oi,
        &format!(
            "mean R@20: learned/learned {oo:.4} vs sequential/learned {so:.4} \
             and learned/identity {oi:.4}"
        ),
    );
}

// ---------------------------------------------------------------------------
// Gate 8 (conditional): benchmark reproduction when the operator supplies a
// real events file.

#[test]
fn criterion_08_benchmark_reproduction_when_data_supplied() {
    let Some(path) = std::env::var_os("SWALK_DIGI_EVENTS") else {
        println!(
            "criterion 08 SKIP — set SWALK_DIGI_EVENTS=<events.tsv> \
             (SessionId/ItemId/Time columns) to run the benchmark reproduction"
        );
        return;
    };
    let opts = swalk::corpus::LoadOptions::default();
    let (log, _) = swalk::corpus::load_events(std::path::Path::new(&path), &opts).unwrap();
    let (ds, _) = preprocess(&log, &PreprocessOptions::default()).unwrap();
    let mut splits = chronological_split(
        &ds,
        SplitSpec::Single {
            test_window_secs: 7 * 86_400,
        },
    )
    .unwrap();
    let (train, test) = splits.pop().unwrap();
    let hp = Profile::Diginetica.params();
    let (r, t) = train_matrices(&train, &hp);

    // Compose in 32-bit: halves the memory at this scale.
    let r32: DenseMatrix<f32> = r.convert();
    let t32: DenseMatrix<f32> = t.convert();
    drop((r, t));
    let (m, _) = compose_rwr(&r32, &t32, hp.alpha, None, DEFAULT_MAX_STEPS).unwrap();

    let scorer = ModelScorer {
        matrix: ScoreMatrix::DenseF32(&m),
        delta_inf: hp.delta_inf,
    };
    let rep = evaluate(&scorer, &train.vocab, &test, &[20], None).unwrap();
    let got = rep.at(20).unwrap();
    gate(
        8,
        (got.hr - 0.542).abs() <= 0.03 && (got.mrr - 0.193).abs() <= 0.015,
        &format!(
            "HR@20 {:.4} (want 0.542±0.03), MRR@20 {:.4} (want 0.193±0.015)",
            got.hr, got.mrr
        ),
    );
}

// ---------------------------------------------------------------------------
// Gate 9: serialization round-trips exactly; corruption is diagnosed.

#[test]
fn criterion_09_serialization_roundtrip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut ok = true;
    let mut detail = String::new();

    for case in 0..20u64 {
        let n = rng.random_range(3..=40);
        let mut m = DenseMatrix::<f64>::zeros(n);
        for i in 0..n {
            for j in 0..n {
                if rng.random_bool(0.6) {
                    // Values that survive the f32 narrowing exactly.
                    m.set(i, j, f64::from(rng.random_range(-1.0f32..1.0)));
                }
            }
        }
        let keep = rng.random_range(0.05..=1.0);
        let scores = prune_magnitude(&m, keep).unwrap();
        let meta = ModelMeta {
            version: FORMAT_VERSION,
            n: n as u64,
            nnz: scores.nnz() as u64,
            hyper: HyperParams::default(),
            composition: CompositionMeta {
                mode: "rwr".to_string(),
                k: None,
                epsilon: Some(1e-3 * n as f64),
                max_steps: Some(10),
                steps_run: Some(4),
                converged: Some(true),
            },
            transition: "ours".to_string(),
            teleportation: "ours".to_string(),
            precision: "f64".to_string(),
            keep_ratio: keep,
            vocab: (0..n).map(|i| format!("item{i:05}")).collect(),
            created_unix: 1_700_000_000 + case as i64,
        };
        let base = dir.path().join(format!("model{case}"));
        save_model(&base, &meta, &scores).unwrap();
        let (meta2, scores2) = load_model(&base).unwrap();
        if !(meta2 == meta && scores2.n() == scores.n() && scores2.entries().eq(scores.entries()))
        {
            ok = false;
            let first_diff = scores
                .entries()
                .zip(scores2.entries())
                .find(|(a, b)| a != b)
                .map(|(a, b)| format!("saved {a:?} loaded {b:?}"))
                .unwrap_or_default();
            let mut fields = Vec::new();
            if meta2.version != meta.version {
                fields.push("version");
            }
            if meta2.n != meta.n || meta2.nnz != meta.nnz {
                fields.push("shape");
            }
            if meta2.hyper != meta.hyper {
                fields.push("hyper");
            }
            if meta2.composition != meta.composition {
                fields.push("composition");
            }
            if meta2.keep_ratio != meta.keep_ratio {
                fields.push("keep_ratio");
            }
            if meta2.vocab != meta.vocab {
                fields.push("vocab");
            }
            if meta2.created_unix != meta.created_unix {
                fields.push("created_unix");
            }
            detail = format!(
                "case {case} did not round-trip (meta fields {fields:?}, n {} vs {}, {first_diff})",
                scores.n(),
                scores2.n()
            );
            break;
        }
        // Saving the loaded model reproduces both files byte for byte.
        let base2 = dir.path().join(format!("model{case}b"));
        save_model(&base2, &meta2, &scores2).unwrap();
        let same_meta =
            std::fs::read(meta_path(&base)).unwrap() == std::fs::read(meta_path(&base2)).unwrap();
        let same_bin = std::fs::read(entries_path(&base)).unwrap()
            == std::fs::read(entries_path(&base2)).unwrap();
        if !(same_meta && same_bin) {
            ok = false;
            detail = format!("case {case} re-save not byte-identical");
            break;
        }
    }

    // Corruption battery on a fresh small model: the header is 24 bytes
    // (magic, version, n, nnz) and entries are 12-byte (row, col, value)
    // triples, so the three entries of this matrix sit at offsets 24, 36,
    // and 48.
    if ok {
        let m: DenseMatrix<f64> = DenseMatrix::from_rows(2, &[0.5, 0.25, 0.0, 1.0]);
        let scores = prune_magnitude(&m, 1.0).unwrap();
        let meta = ModelMeta {
            version: FORMAT_VERSION,
            n: 2,
            nnz: scores.nnz() as u64,
            hyper: HyperParams::default(),
            composition: CompositionMeta {
                mode: "first-step".to_string(),
                k: None,
                epsilon: None,
                max_steps: None,
                steps_run: None,
                converged: None,
            },
            transition: "ours".to_string(),
            teleportation: "identity".to_string(),
            precision: "f64".to_string(),
            keep_ratio: 1.0,
            vocab: vec!["a".to_string(), "b".to_string()],
            created_unix: 0,
        };
        let base = dir.path().join("victim");
        save_model(&base, &meta, &scores).unwrap();
        let pristine = std::fs::read(entries_path(&base)).unwrap();

        type Mutator = Box<dyn Fn(&mut Vec<u8>)>;
        let cases: Vec<(&str, Mutator, &str)> = vec![
            (
                "truncated file",
                Box::new(|b: &mut Vec<u8>| {
                    let keep = b.len() - 4;
                    b.truncate(keep);
                }),
                "bytes",
            ),
            ("bad magic", Box::new(|b: &mut Vec<u8>| b[0] = b'X'), "magic"),
            (
                "alien version",
                Box::new(|b: &mut Vec<u8>| b[4] = 9),
                "version",
            ),
            (
                "unsorted entries",
                Box::new(|b: &mut Vec<u8>| {
                    let (head, tail) = b.split_at_mut(36);
                    tail[..12].swap_with_slice(&mut head[24..36]);
                }),
                "ordering",
            ),
            (
                "non-finite value",
                Box::new(|b: &mut Vec<u8>| {
                    b[32..36].copy_from_slice(&f32::NAN.to_le_bytes());
                }),
                "non-finite",
            ),
            (
                "index out of range",
                Box::new(|b: &mut Vec<u8>| {
                    b[24..28].copy_from_slice(&7u32.to_le_bytes());
                }),
                "exceeds",
            ),
            (
                "entry count lies",
                Box::new(|b: &mut Vec<u8>| {
                    b[16..24].copy_from_slice(&1u64.to_le_bytes());
                }),
                "expected",
            ),
        ];
        for (what, mutate, needle) in cases {
            let mut bytes = pristine.clone();
            mutate(&mut bytes);
            std::fs::write(entries_path(&base), &bytes).unwrap();
            match load_model(&base) {
                Ok(_) => {
                    ok = false;
                    detail = format!("{what} was accepted");
                    break;
                }
                Err(e) => {
                    let msg = e.to_string();
                    if !msg.contains(needle) {
                        ok = false;
                        detail = format!("{what}: diagnostic {msg:?} lacks {needle:?}");
                        break;
                    }
                }
            }
        }
    }

    if ok {
        detail = "20 round-trips byte-identical, 7 corruption modes diagnosed".to_string();
    }
    gate(9, ok, &detail);
}

// ---------------------------------------------------------------------------
// Gate 10: metric arithmetic on 25 hand-computed scenarios, compared
// bit-for-bit. Expected values are written in the same f64 operation shapes
// the evaluator uses (integer-derived divisions, in-order sums), so the
// comparison is exact, not approximate.

/// Scores every item the same regardless of prefix.
struct FixedScorer(&'static [f64]);

impl PrefixScorer for FixedScorer {
    fn n_items(&self) -> usize {
        self.0.len()
    }
    fn score_prefix(&self, _prefix: &[Option<u32>]) -> Vec<f64> {
        self.0.to_vec()
    }
}

struct Scenario {
    name: &'static str,
    model_items: usize,
    ds_items: usize,
    sessions: &'static [&'static [u32]],
    /// `Some` = fixed per-item scores; `None` = successor-cycle model
    /// scored through the real session-vector path.
    scores: Option<&'static [f64]>,
    cutoff: usize,
    events: u64,
    skipped: u64,
    /// Expected (hr, mrr, recall, map).
    expect: [f64; 4],
}

fn tiny_dataset(items: usize, sessions: &[&[u32]]) -> SessionDataset {
    SessionDataset {
        sessions: sessions.iter().map(|s| s.to_vec()).collect(),
        session_ids: (0..sessions.len()).map(|i| format!("s{i}")).collect(),
        end_times: (0..sessions.len() as i64).collect(),
        vocab: Vocab::from_ids((0..items).map(|i| format!("i{i}"))),
    }
}

#[test]
fn criterion_10_metrics_match_hand_computed_scenarios() {
    // Shared catalog: item 0 = A, 1 = B, 2 = C, 3 = q (the session head in
    // most scenarios). The default scorer F ranks [A, C, B] and drops q
    // (score 0); items 4+ exist only in dataset vocabularies, so they are
    // unknown to every scorer.
    const F: &[f64] = &[3.0, 1.0, 2.0, 0.0];
    const TIES: &[f64] = &[2.0, 2.0, 2.0, 0.0];
    const ZERO: &[f64] = &[0.0, 0.0, 0.0, 0.0];
    const Q_TOP: &[f64] = &[1.0, 0.0, 2.0, 3.0];
    const CBA: &[f64] = &[1.0, 2.0, 3.0, 0.0];
    const DESC: &[f64] = &[5.0, 4.0, 3.0, 0.0];

    let scenarios: Vec<Scenario> = vec![
        Scenario {
            name: "top item hit at cutoff 1",
            model_items: 4,
            ds_items: 4,
            sessions: &[&[3, 0]],
            scores: Some(F),
            cutoff: 1,
            events: 1,
            skipped: 0,
            expect: [1.0, 1.0, 1.0, 1.0],
        },
        Scenario {
            name: "top item hit keeps full credit at cutoff 2",
            model_items: 4,
            ds_items: 4,
            sessions: &[&[3, 0]],
            scores: Some(F),
            cutoff: 2,
            events: 1,
            skipped: 0,
            expect: [1.0, 1.0, 1.0, 1.0],
        },
        Scenario {
            name: "third-ranked target misses cutoff 1",
            model_items: 4,
            ds_items: 4,
            sessions: &[&[3, 1]],
            scores: Some(F),
            cutoff: 1,
            events: 1,
            skipped: 0,
            expect: [0.0, 0.0, 0.0, 0.0],
        },
        Scenario {
            name: "third-ranked target pays rank discount at cutoff 3",
            model_items: 4,
            ds_items: 4,
            sessions: &[&[3, 1]],
            scores: Some(F),
            cutoff: 3,
            events: 1,
            skipped: 0,
            expect: [1.0, 1.0 / 3.0, 1.0, 1.0 / 3.0],
        },
        Scenario {
            name: "two events average their rank credit",
            model_items: 4,
            ds_items: 4,
            sessions: &[&[3, 0, 1]],
            scores: Some(F),
            cutoff: 3,
            events: 2,
            skipped: 0,
            // Event 1: target rank 0, both relevant items ranked
            // (precisions 1 and 2/3). Event 2: target rank 2.
            expect: [
                1.0,
                (1.0 + 1.0 / 3.0) / 2.0,
                1.0,
                ((1.0 + 2.0 / 3.0) / 2.0 + 1.0 / 3.0) / 2.0,
            ],
        },
        Scenario {
            name: "two events at cutoff 1: only the first hits",
            model_items: 4,
            ds_items: 4,
            sessions: &[&[3, 0, 1]],
            scores: Some(F),
            cutoff: 1,
            events: 2,
            skipped: 0,
            expect: [0.5, 0.5, 0.25, 0.5],
        },
        Scenario {
            name: "two events at cutoff 2: second target still out of reach",
            model_items: 4,
            ds_items: 4,
            sessions: &[&[3, 0, 1]],
            scores: Some(F),
            cutoff: 2,
            events: 2,
            skipped: 0,
            expect: [0.5, 0.5, 0.25, 0.25],
        },
        Scenario {
            name: "all-zero scores recommend nothing",
            model_items: 4,
            ds_items: 4,
            sessions: &[&[3, 0]],
            scores: Some(ZERO),
            cutoff: 5,
            events: 1,
            skipped: 0,
            expect: [0.0, 0.0, 0.0, 0.0],
        },
        Scenario {
            name: "ties resolve toward smaller ids and crowd the target out",
            model_items: 4,
            ds_items: 4,
            sessions: &[&[3, 2]],
            scores: Some(TIES),
            cutoff: 2,
            events: 1,
            skipped: 0,
            expect: [0.0, 0.0, 0.0, 0.0],
        },
        Scenario {
            name: "tied target surfaces once the cutoff reaches its id order",
            model_items: 4,
            ds_items: 4,
            sessions: &[&[3, 2]],
            scores: Some(TIES),
            cutoff: 3,
            events: 1,
            skipped: 0,
            expect: [1.0, 1.0 / 3.0, 1.0, 1.0 / 3.0],
        },
        Scenario {
            name: "repeated suffix item counts once as relevant",
            model_items: 4,
            ds_items: 4,
            sessions: &[&[3, 0, 0]],
            scores: Some(F),
            cutoff: 2,
            events: 2,
            skipped: 0,
            expect: [1.0, 1.0, 1.0, 1.0],
        },
        Scenario {
            name: "target outside the catalog can never hit",
            model_items: 4,
            ds_items: 5,
            sessions: &[&[3, 4]],
            scores: Some(F),
            cutoff: 3,
            events: 1,
            skipped: 0,
            expect: [0.0, 0.0, 0.0, 0.0],
        },
        Scenario {
            name: "all-unknown prefix is skipped, later prefixes still count",
            model_items: 4,
            ds_items: 5,
            sessions: &[&[4, 3, 0]],
            scores: Some(F),
            cutoff: 1,
            events: 1,
            skipped: 1,
            expect: [1.0, 1.0, 1.0, 1.0],
        },
        Scenario {
            name: "three events with deep relevant suffixes",
            model_items: 4,
            ds_items: 4,
            sessions: &[&[3, 2, 1, 0]],
            scores: Some(DESC),
            cutoff: 2,
            events: 3,
            skipped: 0,
            // Targets C, B, A against the fixed ranking [A, B, C]: ranks
            // miss, 1, 0; recalls 2/3, 1, 1; precision always perfect.
            expect: [
                (1.0 + 1.0) / 3.0,
                (0.5 + 1.0) / 3.0,
                ((2.0 / 3.0 + 1.0) + 1.0) / 3.0,
                1.0,
            ],
        },
        Scenario {
            name: "cutoff beyond the ranked list sees the whole list",
            model_items: 4,
            ds_items: 4,
            sessions: &[&[3, 0]],
            scores: Some(F),
            cutoff: 10,
            events: 1,
            skipped: 0,
            expect: [1.0, 1.0, 1.0, 1.0],
        },
        Scenario {
            name: "successor cycle scored through the session vector",
            model_items: 3,
            ds_items: 3,
            sessions: &[&[0, 1, 2]],
            scores: None,
            cutoff: 2,
            events: 2,
            skipped: 0,
            // Event 1 ranks only item 1 (half the relevant set); event 2
            // ranks its target first with full recall.
            expect: [1.0, 1.0, 0.75, 0.75],
        },
        Scenario {
            name: "a model that ranks the query item wastes the slot",
            model_items: 4,
            ds_items: 4,
            sessions: &[&[3, 1]],
            scores: Some(Q_TOP),
            cutoff: 3,
            events: 1,
            skipped: 0,
            expect: [0.0, 0.0, 0.0, 0.0],
        },
        Scenario {
            name: "immediate repeat of the query item",
            model_items: 4,
            ds_items: 4,
            sessions: &[&[0, 0]],
            scores: Some(F),
            cutoff: 1,
            events: 1,
            skipped: 0,
            expect: [1.0, 1.0, 1.0, 1.0],
        },
        Scenario {
            name: "two sessions average: one hit, one miss at cutoff 1",
            model_items: 4,
            ds_items: 4,
            sessions: &[&[3, 0], &[3, 1]],
            scores: Some(F),
            cutoff: 1,
            events: 2,
            skipped: 0,
            expect: [0.5, 0.5, 0.5, 0.5],
        },
        Scenario {
            name: "two sessions average: the miss persists at cutoff 2",
            model_items: 4,
            ds_items: 4,
            sessions: &[&[3, 0], &[3, 1]],
            scores: Some(F),
            cutoff: 2,
            events: 2,
            skipped: 0,
            expect: [0.5, 0.5, 0.5, 0.5],
        },
        Scenario {
            name: "unknown suffix item widens the relevant denominator",
            model_items: 4,
            ds_items: 5,
            sessions: &[&[3, 0, 4]],
            scores: Some(F),
            cutoff: 1,
            events: 2,
            skipped: 0,
            // Event 1: hit, but recall is 1 of 2 relevant (one unknown).
            // Event 2: unknown target misses everything.
            expect: [0.5, 0.5, 0.25, 0.5],
        },
        Scenario {
            name: "bottom-ranked target needs the full cutoff",
            model_items: 4,
            ds_items: 4,
            sessions: &[&[3, 0]],
            scores: Some(CBA),
            cutoff: 3,
            events: 1,
            skipped: 0,
            expect: [1.0, 1.0 / 3.0, 1.0, 1.0 / 3.0],
        },
        Scenario {
            name: "bottom-ranked target misses a tighter cutoff",
            model_items: 4,
            ds_items: 4,
            sessions: &[&[3, 0]],
            scores: Some(CBA),
            cutoff: 2,
            events: 1,
            skipped: 0,
            expect: [0.0, 0.0, 0.0, 0.0],
        },
        Scenario {
            name: "long session at cutoff 1: only the first target is the top pick",
            model_items: 4,
            ds_items: 4,
            sessions: &[&[3, 0, 1, 2]],
            scores: Some(DESC),
            cutoff: 1,
            events: 3,
            skipped: 0,
            // Event 1 hits with 1 of 3 relevant shown; the fixed ranking
            // never moves, so the later targets miss.
            expect: [1.0 / 3.0, 1.0 / 3.0, (1.0 / 3.0) / 3.0, 1.0 / 3.0],
        },
        Scenario {
            name: "second-ranked target at cutoff 2",
            model_items: 4,
            ds_items: 4,
            sessions: &[&[3, 2]],
            scores: Some(F),
            cutoff: 2,
            events: 1,
            skipped: 0,
            expect: [1.0, 0.5, 1.0, 0.5],
        },
    ];
    assert_eq!(scenarios.len(), 25);

    let mut failures = Vec::new();
    for sc in &scenarios {
        let ds = tiny_dataset(sc.ds_items, sc.sessions);
        let model_vocab = Vocab::from_ids((0..sc.model_items).map(|i| format!("i{i}")));
        let rep = match sc.scores {
            Some(v) => evaluate(&FixedScorer(v), &model_vocab, &ds, &[sc.cutoff], None).unwrap(),
            None => {
                let mut m = DenseMatrix::<f64>::zeros(sc.model_items);
                for i in 0..sc.model_items {
                    m.set(i, (i + 1) % sc.model_items, 1.0);
                }
                let scorer = ModelScorer {
                    matrix: ScoreMatrix::DenseF64(&m),
                    delta_inf: 1.0,
                };
                evaluate(&scorer, &model_vocab, &ds, &[sc.cutoff], None).unwrap()
            }
        };
        let got = rep.at(sc.cutoff).unwrap();
        let gv = [got.hr, got.mrr, got.recall, got.map];
        let values_match = gv
            .iter()
            .zip(&sc.expect)
            .all(|(a, b)| a.to_bits() == b.to_bits());
        if !(values_match && rep.events == sc.events && rep.skipped_events == sc.skipped) {
            failures.push(format!(
                "{}: got {:?} with {} events / {} skipped, want {:?} with {} / {}",
                sc.name, gv, rep.events, rep.skipped_events, sc.expect, sc.events, sc.skipped
            ));
        }
    }
    gate(
        10,
        failures.is_empty(),
        &if failures.is_empty() {
            "25 scenarios matched bit-for-bit".to_string()
        } else {
            failures.join("; ")
        },
    );
}
