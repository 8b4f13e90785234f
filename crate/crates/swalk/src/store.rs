//! Model persistence: magnitude pruning, the `.meta.json` sidecar, and the
//! `.coo.bin` entry file.
//!
//! The binary layout is little-endian: the magic bytes `SWLK`, a u32 format
//! version, u64 matrix order n, u64 entry count, then one (u32 row, u32
//! col, f32 value) triple per entry, sorted by (row, col). An empty model
//! is exactly the 24-byte header. Values narrow to f32 on disk and widen
//! back exactly, so save → load → save reproduces the file byte for byte.

use crate::dense::{DenseMatrix, Scalar};
use crate::error::{Error, Result};
use crate::hyper::HyperParams;
use crate::sparse::SparseScores;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"SWLK";
const HEADER_LEN: usize = 24;
const ENTRY_LEN: usize = 12;

/// How the scoring matrix was composed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionMeta {
    /// "rwr", "kstep", or "first-step".
    pub mode: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub max_steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub steps_run: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub converged: Option<bool>,
}

/// Sidecar metadata for a stored model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub version: u32,
    pub n: u64,
    pub nnz: u64,
    pub hyper: HyperParams,
    pub composition: CompositionMeta,
    /// "ours", "sequential", or "identity".
    pub transition: String,
    /// "ours", "association", or "identity".
    pub teleportation: String,
    /// Element type the composition ran in: "f32" or "f64".
    pub precision: String,
    /// Fraction of n² entries retained by pruning (1.0 = everything).
    pub keep_ratio: f64,
    /// Ordered external item ids; position = internal id.
    pub vocab: Vec<String>,
    /// Unix seconds at save time. Excluded from identity comparisons.
    pub created_unix: i64,
}

impl ModelMeta {
    /// Equality over everything except the save timestamp.
    pub fn equals_ignoring_timestamp(&self, other: &ModelMeta) -> bool {
        let mut a = self.clone();
        let mut b = other.clone();
        a.created_unix = 0;
        b.created_unix = 0;
        a == b
    }
}

fn sibling_path(base: &Path, suffix: &str) -> PathBuf {
    let mut os = base.as_os_str().to_owned();
    os.push(suffix);
    PathBuf::from(os)
}

/// `<base>.meta.json`
pub fn meta_path(base: &Path) -> PathBuf {
    sibling_path(base, ".meta.json")
}

/// `<base>.coo.bin`
pub fn entries_path(base: &Path) -> PathBuf {
    sibling_path(base, ".coo.bin")
}

/// Keep the `ceil(keep_ratio · n²)` entries of largest magnitude.
///
/// Ties at the threshold break by (row, col) order, earlier entries
/// winning, so the kept count is exact and runs are reproducible.
pub fn prune_magnitude<T: Scalar>(m: &DenseMatrix<T>, keep_ratio: f64) -> Result<SparseScores> {
    let n = m.n();
    let entries: Vec<(u32, u32, f64)> = (0..n)
        .flat_map(|i| {
            let row = m.row(i);
            row.iter().enumerate().filter_map(move |(j, v)| {
                let v = v.to_f64();
                (v != 0.0).then_some((i as u32, j as u32, v))
            })
        })
        .collect();
    select_by_magnitude(entries, n, keep_ratio)
}

/// Re-prune an already sparse model to a smaller budget.
pub fn prune_scores(s: &SparseScores, keep_ratio: f64) -> Result<SparseScores> {
    select_by_magnitude(s.entries().collect(), s.n(), keep_ratio)
}

fn select_by_magnitude(
    mut entries: Vec<(u32, u32, f64)>,
    n: usize,
    keep_ratio: f64,
) -> Result<SparseScores> {
    if !(keep_ratio > 0.0 && keep_ratio <= 1.0) {
        return Err(Error::config(format!(
            "keep_ratio must be in (0, 1], got {keep_ratio}"
        )));
    }
    if entries.iter().any(|&(_, _, v)| !v.is_finite()) {
        return Err(Error::numeric(
            "cannot prune a matrix with non-finite entries".to_string(),
        ));
    }
    let budget = (keep_ratio * (n as f64) * (n as f64)).ceil() as usize;
    if budget < entries.len() {
        let rank = |e: &(u32, u32, f64)| (std::cmp::Reverse(e.2.abs()), e.0, e.1);
        entries.select_nth_unstable_by(budget - 1, |a, b| {
            rank(a).partial_cmp(&rank(b)).unwrap()
        });
        entries.truncate(budget);
    }
    entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
    SparseScores::from_sorted_entries(n, &entries)
}

/// Write `<base>.meta.json` and `<base>.coo.bin`.
pub fn save_model(base: &Path, meta: &ModelMeta, scores: &SparseScores) -> Result<()> {
    if meta.n != scores.n() as u64 || meta.nnz != scores.nnz() as u64 {
        return Err(Error::data(format!(
            "metadata says n = {}, nnz = {} but matrix has n = {}, nnz = {}",
            meta.n,
            meta.nnz,
            scores.n(),
            scores.nnz()
        )));
    }
    if meta.vocab.len() != scores.n() {
        return Err(Error::data(format!(
            "vocabulary holds {} items but the matrix is {}x{}",
            meta.vocab.len(),
            scores.n(),
            scores.n()
        )));
    }

    let mpath = meta_path(base);
    let mut json = serde_json::to_string_pretty(meta)
        .map_err(|e| Error::data(format!("cannot encode metadata: {e}")))?;
    json.push('\n');
    std::fs::write(&mpath, json).map_err(|e| Error::io(&mpath, e))?;

    let bpath = entries_path(base);
    let file = std::fs::File::create(&bpath).map_err(|e| Error::io(&bpath, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io_err = |e| Error::io(&bpath, e);
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(scores.n() as u64).to_le_bytes()).map_err(io_err)?;
    w.write_all(&(scores.nnz() as u64).to_le_bytes()).map_err(io_err)?;
    for (r, c, v) in scores.entries() {
        w.write_all(&r.to_le_bytes()).map_err(io_err)?;
        w.write_all(&c.to_le_bytes()).map_err(io_err)?;
        w.write_all(&(v as f32).to_le_bytes()).map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

/// Read a model pair back. Every structural invariant of the format is
/// checked: magic, version, length arithmetic, entry ordering, index
/// bounds, finite values, and agreement with the sidecar.
pub fn load_model(base: &Path) -> Result<(ModelMeta, SparseScores)> {
    let mpath = meta_path(base);
    let mjson = read_file(&mpath)?;
    let meta: ModelMeta = serde_json::from_slice(&mjson)
        .map_err(|e| Error::data(format!("{}: bad metadata: {e}", mpath.display())))?;
    if meta.version != FORMAT_VERSION {
        return Err(Error::data(format!(
            "{}: unsupported format version {}",
            mpath.display(),
            meta.version
        )));
    }

    let bpath = entries_path(base);
    let bytes = read_file(&bpath)?;
    let bad = |msg: String| Error::data(format!("{}: {msg}", bpath.display()));
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("file too short ({} bytes)", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(bad("bad magic bytes".to_string()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let nnz = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    if n > u32::MAX as u64 {
        return Err(bad(format!("matrix order {n} out of range")));
    }
    let expect_len = HEADER_LEN as u64 + nnz.saturating_mul(ENTRY_LEN as u64);
    if bytes.len() as u64 != expect_len {
        return Err(bad(format!(
            "expected {expect_len} bytes for {nnz} entries, found {}",
            bytes.len()
        )));
    }

    let mut entries = Vec::with_capacity(nnz as usize);
    let mut prev: Option<(u32, u32)> = None;
    for i in 0..nnz as usize {
        let off = HEADER_LEN + i * ENTRY_LEN;
        let r = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        let c = u32::from_le_bytes(bytes[off + 4..off + 8].try_into().unwrap());
        let v = f32::from_le_bytes(bytes[off + 8..off + 12].try_into().unwrap());
        if r as u64 >= n || c as u64 >= n {
            return Err(bad(format!("entry {i} at ({r}, {c}) exceeds n = {n}")));
        }
        if let Some(p) = prev {
            if (r, c) <= p {
                return Err(bad(format!("entry {i} breaks (row, col) ordering")));
            }
        }
        if !v.is_finite() {
            return Err(bad(format!("entry {i} holds non-finite value {v}")));
        }
        prev = Some((r, c));
        entries.push((r, c, v as f64));
    }

    if meta.n != n || meta.nnz != nnz {
        return Err(Error::data(format!(
            "{}: sidecar says n = {}, nnz = {} but entry file has n = {n}, nnz = {nnz}",
            mpath.display(),
            meta.n,
            meta.nnz
        )));
    }
    if meta.vocab.len() as u64 != n {
        return Err(Error::data(format!(
            "{}: vocabulary holds {} items but the matrix order is {n}",
            mpath.display(),
            meta.vocab.len()
        )));
    }

    let scores = SparseScores::from_sorted_entries(n as usize, &entries)?;
    Ok((meta, scores))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::config(format!("model file not found: {}", path.display()))
        } else {
            Error::io(path, e)
        }
    })
}
