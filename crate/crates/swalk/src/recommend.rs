//! Score a session prefix against the composed matrix and rank items.

use crate::dense::DenseMatrix;
use crate::sparse::SparseScores;
use serde::Serialize;

/// Ranked recommendation slate: parallel item/score lists, best first.
/// Only items with strictly positive scores appear, so the list can be
/// shorter than requested — or empty when the model has nothing to say.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedList {
    pub items: Vec<u32>,
    pub scores: Vec<f64>,
}

impl RankedList {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Recency-weighted item profile of a session prefix.
///
/// The item at 1-based position p of a prefix of length L weighs
/// exp(-(L-p)/delta), so the newest event carries weight 1 and older ones
/// fade. A repeated item keeps its latest occurrence. Unknown items (None)
/// contribute nothing but still hold their position, aging what came
/// before them. Returns (sorted sparse vector, skipped unknown count).
pub fn session_vector(prefix: &[Option<u32>], delta_inf: f64) -> (Vec<(u32, f64)>, usize) {
    let len = prefix.len();
    let mut weights: std::collections::HashMap<u32, f64> = std::collections::HashMap::new();
    let mut skipped = 0usize;
    for (p0, it) in prefix.iter().enumerate() {
        match it {
            Some(item) => {
                let w = (-((len - (p0 + 1)) as f64) / delta_inf).exp();
                // Later positions always weigh more, so overwrite is max.
                weights.insert(*item, w);
            }
            None => skipped += 1,
        }
    }
    let mut sv: Vec<(u32, f64)> = weights.into_iter().collect();
    sv.sort_unstable_by_key(|&(i, _)| i);
    (sv, skipped)
}

/// Scoring backend: the composed matrix in either dense precision, or the
/// pruned sparse form.
#[derive(Clone, Copy)]
pub enum ScoreMatrix<'a> {
    DenseF64(&'a DenseMatrix<f64>),
    DenseF32(&'a DenseMatrix<f32>),
    Sparse(&'a SparseScores),
}

impl ScoreMatrix<'_> {
    pub fn n(&self) -> usize {
        match self {
            ScoreMatrix::DenseF64(m) => m.n(),
            ScoreMatrix::DenseF32(m) => m.n(),
            ScoreMatrix::Sparse(s) => s.n(),
        }
    }

    /// scores = svᵀ · M, accumulated in f64 in session-vector order. The
    /// dense and sparse paths visit identical nonzero entries in identical
    /// order, so an unpruned sparse model scores bit-for-bit the same.
    pub fn score(&self, sv: &[(u32, f64)]) -> Vec<f64> {
        let n = self.n();
        let mut acc = vec![0.0f64; n];
        match self {
            ScoreMatrix::DenseF64(m) => {
                for &(i, w) in sv {
                    for (a, v) in acc.iter_mut().zip(m.row(i as usize)) {
                        *a += w * *v;
                    }
                }
            }
            ScoreMatrix::DenseF32(m) => {
                for &(i, w) in sv {
                    for (a, v) in acc.iter_mut().zip(m.row(i as usize)) {
                        *a += w * (*v as f64);
                    }
                }
            }
            ScoreMatrix::Sparse(s) => {
                for &(i, w) in sv {
                    let (idx, val) = s.row(i as usize);
                    for (&j, &v) in idx.iter().zip(val) {
                        acc[j as usize] += w * v;
                    }
                }
            }
        }
        acc
    }
}

/// Top `n` positive-score items, ordered by score descending with ties
/// broken toward the smaller item id.
pub fn top_n(scores: &[f64], n: usize) -> RankedList {
    let mut cands: Vec<u32> = (0..scores.len() as u32)
        .filter(|&i| scores[i as usize] > 0.0)
        .collect();
    let better = |&a: &u32, &b: &u32| {
        scores[b as usize]
            .partial_cmp(&scores[a as usize])
            .unwrap()
            .then(a.cmp(&b))
    };
    if cands.len() > n && n > 0 {
        cands.select_nth_unstable_by(n - 1, better);
        cands.truncate(n);
    }
    cands.sort_unstable_by(better);
    RankedList {
        scores: cands.iter().map(|&i| scores[i as usize]).collect(),
        items: cands,
    }
}
