//! Closed-form linear item models and the steps that make them stochastic.
//!
//! Both models are ridge regressions in the item space, solved exactly via
//! one Cholesky factorization each. The transition model regresses future
//! session parts on past parts; the teleportation model reconstructs full
//! sessions from themselves with a capped diagonal so items cannot simply
//! predict themselves. Clamping, row normalization, and the self-loop mix
//! then turn the solutions into row-stochastic matrices fit for the walk.

use crate::corpus::SessionDataset;
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::linalg::CholeskyFactor;
use crate::sparse::SparseMatrix;

/// Factored ridge Gram matrix WᵀW + λI, reusable across right-hand sides.
pub struct RegularizedGram {
    n: usize,
    factor: CholeskyFactor,
}

impl RegularizedGram {
    pub fn new(w: &SparseMatrix, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::config(format!(
                "ridge strength must be positive and finite, got {lambda}"
            )));
        }
        let mut g = w.gram();
        let n = g.n();
        for i in 0..n {
            let d = g.get(i, i) + lambda;
            g.set(i, i, d);
        }
        Ok(RegularizedGram {
            n,
            factor: CholeskyFactor::factor(g)?,
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Solve (WᵀW + λI) · X = B in place.
    pub fn solve(&self, rhs: &mut DenseMatrix<f64>) {
        self.factor.solve_matrix(rhs);
    }
}

/// Transition solution: regress future parts on past parts,
/// B = (YᵀY + λI)⁻¹ YᵀZ for past matrix Y and future matrix Z.
pub fn solve_transition(
    past: &SparseMatrix,
    future: &SparseMatrix,
    lambda: f64,
) -> Result<DenseMatrix<f64>> {
    let gram = RegularizedGram::new(past, lambda)?;
    let mut b = past.t_mul(future)?;
    gram.solve(&mut b);
    Ok(b)
}

/// Teleportation solution: B = I − P·diag(γ) with P = (XᵀX + λI)⁻¹.
///
/// γ_j caps column j's diagonal at `xi`: when even the full penalty λ
/// cannot push the self-similarity above xi, γ_j stays λ; otherwise
/// γ_j = (1 − ξ)/P_jj, which lands the diagonal exactly on xi. `xi = 0`
/// zeroes the diagonal, `xi = inf` disables the cap (B = I − λP).
pub fn solve_teleportation(x: &SparseMatrix, lambda: f64, xi: f64) -> Result<DenseMatrix<f64>> {
    if xi.is_nan() || xi < 0.0 {
        return Err(Error::config(format!(
            "xi must be non-negative (or inf), got {xi}"
        )));
    }
    let gram = RegularizedGram::new(x, lambda)?;
    let n = gram.n();
    let mut p = DenseMatrix::identity(n);
    gram.solve(&mut p);

    let gammas: Vec<f64> = (0..n)
        .map(|j| {
            let pjj = p.get(j, j);
            if 1.0 - lambda * pjj <= xi {
                lambda
            } else {
                (1.0 - xi) / pjj
            }
        })
        .collect();
    let mut b = p;
    for i in 0..n {
        let row = b.row_mut(i);
        for (j, (v, &g)) in row.iter_mut().zip(&gammas).enumerate() {
            *v = f64::from(i == j) - *v * g;
        }
    }
    Ok(b)
}

/// Zero out negative entries. Returns how many were clamped.
pub fn clamp_nonnegative(m: &mut DenseMatrix<f64>) -> u64 {
    let mut clamped = 0;
    for v in m.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
            clamped += 1;
        }
    }
    clamped
}

/// Scale each row to sum to one. Rows with nothing left (all mass clamped
/// away) become self-loops. Returns the self-loop count; non-finite input
/// is a numeric error.
pub fn row_normalize(m: &mut DenseMatrix<f64>) -> Result<u64> {
    let n = m.n();
    let mut self_loops = 0;
    for i in 0..n {
        let row = m.row_mut(i);
        let sum: f64 = row.iter().sum();
        if !sum.is_finite() {
            return Err(Error::numeric(format!(
                "row {i} sums to {sum} during normalization"
            )));
        }
        if sum <= 0.0 {
            row.fill(0.0);
            row[i] = 1.0;
            self_loops += 1;
        } else {
            let inv = 1.0 / sum;
            for v in row.iter_mut() {
                *v *= inv;
            }
        }
    }
    Ok(self_loops)
}

/// T := beta · T + (1 − beta) · I, the self-loop mix that keeps part of the
/// walk's restart mass on the current item.
pub fn mix_self_loop(t: &mut DenseMatrix<f64>, beta: f64) {
    let n = t.n();
    for i in 0..n {
        let row = t.row_mut(i);
        for v in row.iter_mut() {
            *v *= beta;
        }
        row[i] += 1.0 - beta;
    }
}

/// Sequential-rules baseline transition: count ordered in-session pairs
/// within `window` steps, weighted by inverse gap, then normalize rows.
pub fn baseline_sr(ds: &SessionDataset, window: usize) -> Result<DenseMatrix<f64>> {
    let n = ds.n();
    let mut m = DenseMatrix::<f64>::zeros(n);
    for sess in &ds.sessions {
        for p in 0..sess.len() {
            let hi = (p + 1 + window).min(sess.len());
            for q in p + 1..hi {
                if sess[p] != sess[q] {
                    let cur = m.get(sess[p] as usize, sess[q] as usize);
                    m.set(
                        sess[p] as usize,
                        sess[q] as usize,
                        cur + 1.0 / (q - p) as f64,
                    );
                }
            }
        }
    }
    row_normalize(&mut m)?;
    Ok(m)
}

/// Association-rules baseline teleportation: symmetric co-occurrence
/// counts over whole sessions, rows normalized.
pub fn baseline_ar(ds: &SessionDataset) -> Result<DenseMatrix<f64>> {
    let n = ds.n();
    let mut m = DenseMatrix::<f64>::zeros(n);
    for sess in &ds.sessions {
        for p in 0..sess.len() {
            for q in p + 1..sess.len() {
                let (a, b) = (sess[p] as usize, sess[q] as usize);
                if a != b {
                    m.set(a, b, m.get(a, b) + 1.0);
                    m.set(b, a, m.get(b, a) + 1.0);
                }
            }
        }
    }
    row_normalize(&mut m)?;
    Ok(m)
}
