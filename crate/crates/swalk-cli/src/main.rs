pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use config::{CompositionMode, Globals, HyperFlags, Precision, RunConfig, SplitMode,
    TeleportationSource, TransitionSource};

#[derive(Parser)]
#[command(
    name = "swalk",
    version,
    about = "Train, prune, and evaluate session-walk recommendation models"
)]
struct Cli {
    #[command(flatten)]
    globals: Globals,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse an event log, filter it, and write a split corpus.
    Prepare {
        /// Delimited event file with SessionId, ItemId, and Time columns.
        #[arg(long)]
        events: PathBuf,
        /// Output directory for the prepared corpus.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, value_enum)]
        split: Option<SplitMode>,
        /// Days in each chronological test window.
        #[arg(long)]
        test_window_days: Option<f64>,
        /// Minimum occurrences for an item to survive filtering.
        #[arg(long)]
        min_item_support: Option<usize>,
        /// Minimum events for a session to survive filtering.
        #[arg(long)]
        min_session_len: Option<usize>,
    },
    /// Fit the linear models on one training fold, compose, and save.
    Train {
        /// Directory written by prepare.
        #[arg(long, value_name = "DIR")]
        prepared: PathBuf,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        /// Output base path; writes <base>.meta.json and <base>.coo.bin.
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        hyper: HyperFlags,
        #[arg(long, value_enum)]
        composition: Option<CompositionMode>,
        /// Hop count for kstep composition.
        #[arg(long)]
        k: Option<usize>,
        /// Walk convergence tolerance (default scales with catalog size).
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long, value_enum)]
        transition: Option<TransitionSource>,
        #[arg(long, value_enum)]
        teleportation: Option<TeleportationSource>,
        /// Lookahead window for the sequential-rules baseline.
        #[arg(long)]
        sr_window: Option<usize>,
        #[arg(long, value_enum)]
        precision: Option<Precision>,
        /// Fraction of n² entries kept by magnitude pruning.
        #[arg(long)]
        keep_ratio: Option<f64>,
        /// Write the walk convergence trace to this JSON file.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Shrink a stored model to a smaller entry budget.
    Prune {
        #[arg(long)]
        model: PathBuf,
        /// Output base path for the pruned model.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        keep_ratio: f64,
    },
    /// Replay a test fold against a model and report ranking metrics.
    Eval {
        #[arg(long, value_name = "DIR")]
        prepared: PathBuf,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated ranking cutoffs.
        #[arg(long, value_delimiter = ',')]
        cutoffs: Option<Vec<usize>>,
        /// Inference decay override (default: the model's stored value).
        #[arg(long)]
        delta_inf: Option<f64>,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write one JSON line per prediction event to this file.
        #[arg(long)]
        per_event: Option<PathBuf>,
    },
    /// Score session prefixes against a model, one JSON line each.
    Recommend {
        #[arg(long)]
        model: PathBuf,
        /// Prefix file, one whitespace-separated item list per line
        /// (default: stdin).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Recommendations per prefix.
        #[arg(long, short = 'n', default_value_t = 20)]
        top: usize,
        /// Inference decay override (default: the model's stored value).
        #[arg(long)]
        delta_inf: Option<f64>,
    },
    /// Grid-search alpha, beta, and delta-inf on one fold.
    Sweep {
        #[arg(long, value_name = "DIR")]
        prepared: PathBuf,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        #[command(flatten)]
        hyper: HyperFlags,
        /// Comma-separated alpha grid (default: the configured single value).
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
        /// Comma-separated beta grid.
        #[arg(long, value_delimiter = ',')]
        betas: Option<Vec<f64>>,
        /// Comma-separated delta-inf grid.
        #[arg(long, value_delimiter = ',')]
        delta_infs: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        cutoffs: Option<Vec<usize>>,
        /// Write JSON-lines results here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Some(t) = cli.globals.threads {
        // build_global can only fail if a pool already exists, which only
        // happens when tests drive main twice in-process; ignore that.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    if let Err(e) = run(cli) {
        eprintln!("swalk: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> swalk::Result<()> {
    let mut cfg = RunConfig::resolve(&cli.globals)?;
    match cli.cmd {
        Cmd::Prepare {
            events,
            out,
            split,
            test_window_days,
            min_item_support,
            min_session_len,
        } => {
            if let Some(v) = split {
                cfg.split = v;
            }
            if let Some(v) = test_window_days {
                cfg.test_window_days = v;
            }
            if let Some(v) = min_item_support {
                cfg.min_item_support = v;
            }
            if let Some(v) = min_session_len {
                cfg.min_session_len = v;
            }
            commands::prepare(&cfg, &events, &out)
        }
        Cmd::Train {
            prepared,
            fold,
            model,
            hyper,
            composition,
            k,
            epsilon,
            max_steps,
            transition,
            teleportation,
            sr_window,
            precision,
            keep_ratio,
            trace,
        } => {
            cfg.apply_hyper_flags(&hyper)?;
            if let Some(v) = composition {
                cfg.composition = v;
            }
            if let Some(v) = k {
                cfg.k = v;
            }
            if let Some(v) = epsilon {
                cfg.epsilon = Some(v);
            }
            if let Some(v) = max_steps {
                cfg.max_steps = v;
            }
            if let Some(v) = transition {
                cfg.transition = v;
            }
            if let Some(v) = teleportation {
                cfg.teleportation = v;
            }
            if let Some(v) = sr_window {
                cfg.sr_window = v;
            }
            if let Some(v) = precision {
                cfg.precision = v;
            }
            if let Some(v) = keep_ratio {
                cfg.keep_ratio = v;
            }
            commands::train(&cfg, &prepared, fold, &model, trace.as_deref())
        }
        Cmd::Prune { model, out, keep_ratio } => commands::prune(&cfg, &model, &out, keep_ratio),
        Cmd::Eval {
            prepared,
            fold,
            model,
            cutoffs,
            delta_inf,
            out,
            per_event,
        } => {
            if let Some(v) = cutoffs {
                cfg.cutoffs = v;
            }
            commands::eval(
                &cfg,
                &prepared,
                fold,
                &model,
                delta_inf,
                out.as_deref(),
                per_event.as_deref(),
            )
        }
        Cmd::Recommend {
            model,
            input,
            top,
            delta_inf,
        } => commands::recommend(&cfg, &model, input.as_deref(), top, delta_inf),
        Cmd::Sweep {
            prepared,
            fold,
            hyper,
            alphas,
            betas,
            delta_infs,
            cutoffs,
            out,
        } => {
            cfg.apply_hyper_flags(&hyper)?;
            if let Some(v) = cutoffs {
                cfg.cutoffs = v;
            }
            commands::sweep(
                &cfg,
                &prepared,
                fold,
                &alphas.unwrap_or_default(),
                &betas.unwrap_or_default(),
                &delta_infs.unwrap_or_default(),
                out.as_deref(),
            )
        }
    }
}
