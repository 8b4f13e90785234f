//! Run configuration: defaults, profile presets, an optional JSON config
//! file, and command-line flags, merged in that order (later wins).

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::Deserialize;
use swalk::error::{Error, Result};
use swalk::hyper::{parse_xi, HyperParams, Profile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    Single,
    FiveFold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompositionMode {
    Rwr,
    Kstep,
    FirstStep,
}

impl CompositionMode {
    pub fn name(self) -> &'static str {
        match self {
            CompositionMode::Rwr => "rwr",
            CompositionMode::Kstep => "kstep",
            CompositionMode::FirstStep => "first-step",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransitionSource {
    /// Ridge-solved transition model.
    Ours,
    /// Sequential-rules count baseline.
    Sr,
    Identity,
}

impl TransitionSource {
    pub fn name(self) -> &'static str {
        match self {
            TransitionSource::Ours => "ours",
            TransitionSource::Sr => "sequential",
            TransitionSource::Identity => "identity",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TeleportationSource {
    /// Ridge-solved teleportation model.
    Ours,
    /// Association-rules count baseline.
    Ar,
    Identity,
}

impl TeleportationSource {
    pub fn name(self) -> &'static str {
        match self {
            TeleportationSource::Ours => "ours",
            TeleportationSource::Ar => "association",
            TeleportationSource::Identity => "identity",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Precision {
    F64,
    F32,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::F64 => "f64",
            Precision::F32 => "f32",
        }
    }
}

/// Optional JSON config file. Every field may be omitted; present fields
/// override profile defaults and are themselves overridden by flags.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub profile: Option<String>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub lambda: Option<f64>,
    #[serde(default, deserialize_with = "de_opt_xi")]
    pub xi: Option<f64>,
    pub delta_pos: Option<f64>,
    pub delta_inf: Option<f64>,
    pub split: Option<SplitMode>,
    pub test_window_days: Option<f64>,
    pub min_item_support: Option<usize>,
    pub min_session_len: Option<usize>,
    pub composition: Option<CompositionMode>,
    pub k: Option<usize>,
    pub epsilon: Option<f64>,
    pub max_steps: Option<usize>,
    pub transition: Option<TransitionSource>,
    pub teleportation: Option<TeleportationSource>,
    pub sr_window: Option<usize>,
    pub precision: Option<Precision>,
    pub keep_ratio: Option<f64>,
    pub cutoffs: Option<Vec<usize>>,
}

/// Accept `"xi": 0.5` or `"xi": "inf"`.
fn de_opt_xi<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Option<f64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Str(String),
    }
    match Option::<Raw>::deserialize(d)? {
        None => Ok(None),
        Some(Raw::Num(v)) => Ok(Some(v)),
        Some(Raw::Str(s)) => parse_xi(&s).map(Some).map_err(serde::de::Error::custom),
    }
}

impl FileConfig {
    pub fn read(path: &Path) -> Result<FileConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("bad config {}: {e}", path.display())))
    }
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, clap::Args)]
pub struct Globals {
    /// JSON config file; flags override its fields.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Hyperparameter preset: yoochoose, diginetica, diginetica-folds,
    /// retailrocket, or nowplaying.
    #[arg(long, global = true)]
    pub profile: Option<String>,
    /// Base directory for relative paths (default: $SWALK_DATA_DIR or cwd).
    #[arg(long, global = true, value_name = "DIR")]
    pub data_dir: Option<PathBuf>,
    /// Size of the worker thread pool (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

/// Hyperparameter override flags, shared by train and sweep.
#[derive(Debug, Clone, clap::Args)]
pub struct HyperFlags {
    /// Walk weight on the transition model, in [0, 1].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Self-loop share mixed into the teleportation matrix, in [0, 1].
    #[arg(long)]
    pub beta: Option<f64>,
    /// Ridge strength for both solves.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Teleportation diagonal cap: a number or "inf".
    #[arg(long)]
    pub xi: Option<String>,
    /// Position-decay scale when building training targets.
    #[arg(long)]
    pub delta_pos: Option<f64>,
    /// Position-decay scale when weighting a session prefix at inference.
    #[arg(long)]
    pub delta_inf: Option<f64>,
}

/// Fully resolved settings for one run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub hyper: HyperParams,
    pub split: SplitMode,
    pub test_window_days: f64,
    pub min_item_support: usize,
    pub min_session_len: usize,
    pub composition: CompositionMode,
    pub k: usize,
    pub epsilon: Option<f64>,
    pub max_steps: usize,
    pub transition: TransitionSource,
    pub teleportation: TeleportationSource,
    pub sr_window: usize,
    pub precision: Precision,
    pub keep_ratio: f64,
    pub cutoffs: Vec<usize>,
    data_dir: PathBuf,
}

impl RunConfig {
    /// Merge defaults <- config file <- profile flag <- field flags.
    pub fn resolve(globals: &Globals) -> Result<RunConfig> {
        let file = match &globals.config {
            Some(p) => FileConfig::read(p)?,
            None => FileConfig::default(),
        };

        let mut hyper = match &file.profile {
            Some(name) => Profile::from_name(name)?.params(),
            None => HyperParams::default(),
        };
        if let Some(v) = file.alpha {
            hyper.alpha = v;
        }
        if let Some(v) = file.beta {
            hyper.beta = v;
        }
        if let Some(v) = file.lambda {
            hyper.lambda = v;
        }
        if let Some(v) = file.xi {
            hyper.xi = v;
        }
        if let Some(v) = file.delta_pos {
            hyper.delta_pos = v;
        }
        if let Some(v) = file.delta_inf {
            hyper.delta_inf = v;
        }
        // A profile flag re-seeds the whole hyperparameter block; explicit
        // field flags are applied on top by apply_hyper_flags.
        if let Some(name) = &globals.profile {
            hyper = Profile::from_name(name)?.params();
        }

        let data_dir = globals
            .data_dir
            .clone()
            .or_else(|| std::env::var_os("SWALK_DATA_DIR").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."));

        Ok(RunConfig {
            hyper,
            split: file.split.unwrap_or(SplitMode::Single),
            test_window_days: file.test_window_days.unwrap_or(1.0),
            min_item_support: file.min_item_support.unwrap_or(5),
            min_session_len: file.min_session_len.unwrap_or(2),
            composition: file.composition.unwrap_or(CompositionMode::Rwr),
            k: file.k.unwrap_or(2),
            epsilon: file.epsilon,
            max_steps: file.max_steps.unwrap_or(swalk::walk::DEFAULT_MAX_STEPS),
            transition: file.transition.unwrap_or(TransitionSource::Ours),
            teleportation: file.teleportation.unwrap_or(TeleportationSource::Ours),
            sr_window: file.sr_window.unwrap_or(10),
            precision: file.precision.unwrap_or(Precision::F64),
            keep_ratio: file.keep_ratio.unwrap_or(1.0),
            cutoffs: file.cutoffs.unwrap_or_else(|| vec![5, 10, 20, 50, 100]),
            data_dir,
        })
    }

    pub fn apply_hyper_flags(&mut self, flags: &HyperFlags) -> Result<()> {
        if let Some(v) = flags.alpha {
            self.hyper.alpha = v;
        }
        if let Some(v) = flags.beta {
            self.hyper.beta = v;
        }
        if let Some(v) = flags.lambda {
            self.hyper.lambda = v;
        }
        if let Some(s) = &flags.xi {
            self.hyper.xi = parse_xi(s)?;
        }
        if let Some(v) = flags.delta_pos {
            self.hyper.delta_pos = v;
        }
        if let Some(v) = flags.delta_inf {
            self.hyper.delta_inf = v;
        }
        Ok(())
    }

    /// Resolve a user path: absolute stays as-is, relative joins data_dir.
    pub fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.data_dir.join(p)
        }
    }
}
