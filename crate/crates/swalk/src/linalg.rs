//! Dense kernels: a parallel GEMM wrapper and a blocked Cholesky solver.
//!
//! Everything here is bitwise deterministic across thread counts: work is
//! split into fixed row or column blocks whose results land in disjoint
//! output regions, so no floating-point reduction order depends on
//! scheduling.

use crate::dense::{DenseMatrix, Scalar};
use crate::error::{Error, Result};
use rayon::prelude::*;

/// Block edge for the factorization and the triangular solves.
const NB: usize = 128;

/// Minimum row count per parallel GEMM task. Finer splits than this lose
/// more to kernel startup than they gain from extra threads.
const PAR_MIN_ROWS: usize = 192;

/// C := alpha * A * B + beta * C for square row-major matrices.
///
/// Parallelized over disjoint row blocks of C; each block is one
/// `matrixmultiply` call, so results do not depend on the thread count.
pub fn gemm_into<T: Scalar>(
    c: &mut DenseMatrix<T>,
    alpha: f64,
    a: &DenseMatrix<T>,
    b: &DenseMatrix<T>,
    beta: f64,
) {
    let n = c.n();
    assert_eq!(a.n(), n);
    assert_eq!(b.n(), n);
    if n == 0 {
        return;
    }
    let threads = rayon::current_num_threads();
    let rows_per_task = if threads <= 1 {
        n
    } else {
        n.div_ceil(threads).max(PAR_MIN_ROWS)
    };
    let bp = b.as_ptr() as usize;
    let ap = a.as_ptr() as usize;
    c.data_mut()
        .par_chunks_mut(rows_per_task * n)
        .enumerate()
        .for_each(|(chunk_idx, c_chunk)| {
            let r0 = chunk_idx * rows_per_task;
            let mb = c_chunk.len() / n;
            unsafe {
                T::gemm_raw(
                    mb,
                    n,
                    n,
                    alpha,
                    (ap as *const T).add(r0 * n),
                    n as isize,
                    1,
                    bp as *const T,
                    n as isize,
                    1,
                    beta,
                    c_chunk.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        });
}

/// Lower-triangular Cholesky factor of a symmetric positive definite
/// matrix, with a blocked multi-RHS solve.
///
/// The factorization is right-looking: factor a diagonal block, solve the
/// panel below it, then downdate the trailing submatrix with one GEMM.
/// Entries above the diagonal are never read.
pub struct CholeskyFactor {
    n: usize,
    l: Vec<f64>,
}

impl CholeskyFactor {
    /// Factor A = L·Lᵀ, consuming A. Fails with a numeric error if a pivot
    /// is not strictly positive, which for a ridge Gram matrix means the
    /// regularizer was zero or the input held non-finite values.
    pub fn factor(a: DenseMatrix<f64>) -> Result<Self> {
        let n = a.n();
        let mut l = a;
        {
            let ld = l.data_mut();
            let mut k0 = 0;
            while k0 < n {
                let kb = NB.min(n - k0);
                factor_diag_block(ld, n, k0, kb)?;
                let below = n - k0 - kb;
                if below > 0 {
                    trsm_panel(ld, n, k0, kb);
                    // Trailing downdate: A[k0+kb.., k0+kb..] -= P · Pᵀ with
                    // P = A[k0+kb.., k0..k0+kb]. Writes the full square
                    // block; the upper half holds garbage never read later.
                    let p0 = (k0 + kb) * n + k0;
                    let t0 = (k0 + kb) * n + (k0 + kb);
                    unsafe {
                        let base = ld.as_mut_ptr();
                        f64::gemm_raw(
                            below,
                            kb,
                            below,
                            -1.0,
                            base.add(p0) as *const f64,
                            n as isize,
                            1,
                            base.add(p0) as *const f64,
                            1,
                            n as isize,
                            1.0,
                            base.add(t0),
                            n as isize,
                            1,
                        );
                    }
                }
                k0 += kb;
            }
        }
        Ok(CholeskyFactor {
            n,
            l: l.into_data(),
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Solve L·Lᵀ·X = B in place. B is n×n_rhs row-major.
    ///
    /// Column panels of B are independent, so they solve in parallel with
    /// bitwise-identical results at any thread count.
    pub fn solve_in_place(&self, b: &mut [f64], n_rhs: usize) {
        assert_eq!(b.len(), self.n * n_rhs);
        if self.n == 0 || n_rhs == 0 {
            return;
        }
        let threads = rayon::current_num_threads();
        let panel = if threads <= 1 {
            n_rhs
        } else {
            n_rhs.div_ceil(threads).max(256)
        };
        let bp = SendPtr(b.as_mut_ptr());
        let starts: Vec<usize> = (0..n_rhs).step_by(panel).collect();
        starts.par_iter().for_each(|&c0| {
            let cw = panel.min(n_rhs - c0);
            let p = bp;
            unsafe { self.solve_panel(p.0, n_rhs, c0, cw) };
        });
    }

    /// Convenience: solve with a square dense RHS.
    pub fn solve_matrix(&self, rhs: &mut DenseMatrix<f64>) {
        assert_eq!(rhs.n(), self.n);
        let n = self.n;
        self.solve_in_place(rhs.data_mut(), n);
    }

    /// Forward then backward substitution on columns [c0, c0+cw) of B.
    ///
    /// # Safety
    /// Caller must guarantee the column range is not touched concurrently.
    unsafe fn solve_panel(&self, b: *mut f64, n_rhs: usize, c0: usize, cw: usize) {
        let n = self.n;
        let l = &self.l;
        let row = |r: usize| std::slice::from_raw_parts_mut(b.add(r * n_rhs + c0), cw);

        // Forward: L · Y = B.
        let mut i0 = 0;
        while i0 < n {
            let ib = NB.min(n - i0);
            if i0 > 0 {
                // B[i0 block] -= L[i0.., 0..i0] · B[0..i0]
                f64::gemm_raw(
                    ib,
                    i0,
                    cw,
                    -1.0,
                    l.as_ptr().add(i0 * n),
                    n as isize,
                    1,
                    b.add(c0) as *const f64,
                    n_rhs as isize,
                    1,
                    1.0,
                    b.add(i0 * n_rhs + c0),
                    n_rhs as isize,
                    1,
                );
            }
            for j in 0..ib {
                let pivot_row = i0 + j;
                let lrow = &l[pivot_row * n..pivot_row * n + pivot_row + 1];
                let dst = row(pivot_row);
                for t in 0..j {
                    let coef = lrow[i0 + t];
                    if coef != 0.0 {
                        let src = row(i0 + t);
                        for (d, s) in dst.iter_mut().zip(src.iter()) {
                            *d -= coef * *s;
                        }
                    }
                }
                let inv = 1.0 / lrow[pivot_row];
                for d in dst.iter_mut() {
                    *d *= inv;
                }
            }
            i0 += ib;
        }

        // Backward: Lᵀ · X = Y.
        let mut i0 = n - (if n % NB == 0 { NB } else { n % NB });
        loop {
            let ib = NB.min(n - i0);
            let tail = n - i0 - ib;
            if tail > 0 {
                // Y[i0 block] -= L[i0+ib.., i0..i0+ib]ᵀ · Y[i0+ib..]
                f64::gemm_raw(
                    ib,
                    tail,
                    cw,
                    -1.0,
                    l.as_ptr().add((i0 + ib) * n + i0),
                    1,
                    n as isize,
                    b.add((i0 + ib) * n_rhs + c0) as *const f64,
                    n_rhs as isize,
                    1,
                    1.0,
                    b.add(i0 * n_rhs + c0),
                    n_rhs as isize,
                    1,
                );
            }
            for j in (0..ib).rev() {
                let pivot_row = i0 + j;
                let dst = row(pivot_row);
                for t in j + 1..ib {
                    let coef = l[(i0 + t) * n + pivot_row];
                    if coef != 0.0 {
                        let src = row(i0 + t);
                        for (d, s) in dst.iter_mut().zip(src.iter()) {
                            *d -= coef * *s;
                        }
                    }
                }
                let inv = 1.0 / l[pivot_row * n + pivot_row];
                for d in dst.iter_mut() {
                    *d *= inv;
                }
            }
            if i0 == 0 {
                break;
            }
            i0 -= NB;
        }
    }
}

#[derive(Clone, Copy)]
struct SendPtr(*mut f64);
unsafe impl Send for SendPtr {}
unsafe impl Sync for SendPtr {}

/// Unblocked Cholesky of the kb×kb diagonal block at (k0, k0).
fn factor_diag_block(ld: &mut [f64], n: usize, k0: usize, kb: usize) -> Result<()> {
    let base = ld.as_mut_ptr();
    for j in 0..kb {
        let rj = k0 + j;
        // Rows rj and ri (below) occupy disjoint ranges of `ld`, so the two
        // raw-derived slices never alias.
        let row_j = unsafe { std::slice::from_raw_parts_mut(base.add(rj * n + k0), kb) };
        let mut d = row_j[j];
        for t in 0..j {
            d -= row_j[t] * row_j[t];
        }
        if !(d > 0.0) {
            return Err(Error::numeric(format!(
                "matrix not positive definite at pivot {rj} (d = {d:.3e}); \
                 check the regularizer and input values"
            )));
        }
        let ljj = d.sqrt();
        row_j[j] = ljj;
        let inv = 1.0 / ljj;
        for i in j + 1..kb {
            let ri = k0 + i;
            let row_i = unsafe { std::slice::from_raw_parts_mut(base.add(ri * n + k0), kb) };
            let mut s = row_i[j];
            for t in 0..j {
                s -= row_i[t] * row_j[t];
            }
            row_i[j] = s * inv;
        }
    }
    Ok(())
}

/// Rows below the diagonal block: A[r, k0..k0+kb] := A[r, ..] · L_kk⁻ᵀ,
/// row-wise forward substitution against the freshly factored block.
fn trsm_panel(ld: &mut [f64], n: usize, k0: usize, kb: usize) {
    let diag_start = k0 * n;
    let (diag_part, below) = ld.split_at_mut((k0 + kb) * n);
    let lkk = &diag_part[diag_start..];
    below
        .par_chunks_mut(n)
        .for_each(|brow| {
            let row = &mut brow[k0..k0 + kb];
            for j in 0..kb {
                let lrow_j = &lkk[j * n + k0..j * n + k0 + kb];
                let mut s = row[j];
                for t in 0..j {
                    s -= row[t] * lrow_j[t];
                }
                row[j] = s / lrow_j[j];
            }
        });
}
