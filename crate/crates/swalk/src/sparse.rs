use crate::dense::DenseMatrix;
use crate::error::{Error, Result};

/// Sparse m×n matrix in CSR form. Used for session-item interaction
/// matrices, where m is the number of sessions (or session parts) and n
/// the catalog size.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Build from per-row (column, value) lists. Each row must be sorted by
    /// column with no duplicates; callers produce that naturally because
    /// items are deduplicated before weighting.
    pub fn from_rows(cols: usize, rows: Vec<Vec<(u32, f64)>>) -> Self {
        let nnz: usize = rows.iter().map(Vec::len).sum();
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        indptr.push(0);
        for row in &rows {
            debug_assert!(row.windows(2).all(|w| w[0].0 < w[1].0), "row not sorted");
            for &(c, v) in row {
                debug_assert!((c as usize) < cols);
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        SparseMatrix {
            rows: rows.len(),
            cols,
            indptr,
            indices,
            values,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    #[inline]
    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let lo = self.indptr[i];
        let hi = self.indptr[i + 1];
        (&self.indices[lo..hi], &self.values[lo..hi])
    }

    /// Dense Gram matrix AᵀA, accumulated in f64.
    pub fn gram(&self) -> DenseMatrix<f64> {
        let n = self.cols;
        let mut g = DenseMatrix::zeros(n);
        let gd = g.data_mut();
        for r in 0..self.rows {
            let (idx, val) = self.row(r);
            for (k1, &j1) in idx.iter().enumerate() {
                let v1 = val[k1];
                let grow = &mut gd[j1 as usize * n..(j1 as usize + 1) * n];
                for (k2, &j2) in idx.iter().enumerate() {
                    grow[j2 as usize] += v1 * val[k2];
                }
            }
        }
        g
    }

    /// Dense product AᵀB where A is self. Row counts must match.
    pub fn t_mul(&self, other: &SparseMatrix) -> Result<DenseMatrix<f64>> {
        if self.rows != other.rows {
            return Err(Error::data(format!(
                "row count mismatch in matrix product: {} vs {}",
                self.rows, other.rows
            )));
        }
        if self.cols != other.cols {
            return Err(Error::data(format!(
                "column count mismatch in matrix product: {} vs {}",
                self.cols, other.cols
            )));
        }
        let n = self.cols;
        let mut g = DenseMatrix::zeros(n);
        let gd = g.data_mut();
        for r in 0..self.rows {
            let (aidx, aval) = self.row(r);
            let (bidx, bval) = other.row(r);
            for (k1, &j1) in aidx.iter().enumerate() {
                let v1 = aval[k1];
                let grow = &mut gd[j1 as usize * n..(j1 as usize + 1) * n];
                for (k2, &j2) in bidx.iter().enumerate() {
                    grow[j2 as usize] += v1 * bval[k2];
                }
            }
        }
        Ok(g)
    }
}

/// Pruned item-item scoring matrix in CSR form.
///
/// Values live as f64 in memory; the on-disk format narrows them to f32,
/// and loading widens exactly, so save → load → save is byte-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseScores {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseScores {
    /// Build from entries sorted by (row, col) with no duplicates.
    pub fn from_sorted_entries(n: usize, entries: &[(u32, u32, f64)]) -> Result<Self> {
        let mut indptr = vec![0usize; n + 1];
        let mut indices = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        let mut prev: Option<(u32, u32)> = None;
        for &(r, c, v) in entries {
            if r as usize >= n || c as usize >= n {
                return Err(Error::data(format!(
                    "entry ({r}, {c}) out of bounds for n = {n}"
                )));
            }
            if let Some(p) = prev {
                if (r, c) <= p {
                    return Err(Error::data("entries not sorted by (row, col)".to_string()));
                }
            }
            prev = Some((r, c));
            indptr[r as usize + 1] += 1;
            indices.push(c);
            values.push(v);
        }
        for i in 0..n {
            indptr[i + 1] += indptr[i];
        }
        Ok(SparseScores {
            n,
            indptr,
            indices,
            values,
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    #[inline]
    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let lo = self.indptr[i];
        let hi = self.indptr[i + 1];
        (&self.indices[lo..hi], &self.values[lo..hi])
    }

    /// Iterate entries in (row, col) order.
    pub fn entries(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        (0..self.n).flat_map(move |r| {
            let (idx, val) = self.row(r);
            idx.iter()
                .zip(val)
                .map(move |(&c, &v)| (r as u32, c, v))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gram_matches_hand_computation() {
        // A = [[1, 1], [1, 0]] => AᵀA = [[2, 1], [1, 1]]
        let a = SparseMatrix::from_rows(2, vec![vec![(0, 1.0), (1, 1.0)], vec![(0, 1.0)]]);
        let g = a.gram();
        assert_eq!(g.row(0), &[2.0, 1.0]);
        assert_eq!(g.row(1), &[1.0, 1.0]);
    }

    #[test]
    fn t_mul_matches_hand_computation() {
        // A = [[1, 0], [0, 2]], B = [[3, 1], [0, 1]] => AᵀB = [[3, 1], [0, 2]]
        let a = SparseMatrix::from_rows(2, vec![vec![(0, 1.0)], vec![(1, 2.0)]]);
        let b = SparseMatrix::from_rows(2, vec![vec![(0, 3.0), (1, 1.0)], vec![(1, 1.0)]]);
        let g = a.t_mul(&b).unwrap();
        assert_eq!(g.row(0), &[3.0, 1.0]);
        assert_eq!(g.row(1), &[0.0, 2.0]);
    }

    #[test]
    fn sparse_scores_rejects_unsorted() {
        let err = SparseScores::from_sorted_entries(2, &[(1, 0, 1.0), (0, 1, 2.0)]);
        assert!(err.is_err());
    }

    #[test]
    fn sparse_scores_row_access() {
        let s =
            SparseScores::from_sorted_entries(3, &[(0, 2, 5.0), (2, 0, 1.0), (2, 1, 2.0)]).unwrap();
        assert_eq!(s.row(0), (&[2u32][..], &[5.0][..]));
        assert_eq!(s.row(1), (&[][..], &[][..]));
        assert_eq!(s.row(2), (&[0u32, 1][..], &[1.0, 2.0][..]));
        assert_eq!(s.nnz(), 3);
    }
}
