//! Compose the transition and teleportation matrices into one scoring
//! matrix by iterating the restart update M ← α·M·R + (1−α)·T from M = I.
//!
//! Each step pushes transition mass one hop further while restarts keep
//! re-injecting teleportation mass. Because R is row-stochastic, the
//! entrywise L1 change between steps shrinks by at least a factor of α, so
//! the iteration converges geometrically and a handful of steps suffice.

use crate::dense::{DenseMatrix, Scalar};
use crate::error::{Error, Result};
use crate::linalg::gemm_into;
use serde::Serialize;

pub const DEFAULT_MAX_STEPS: usize = 10;

/// Scale-aware default tolerance: total L1 change of 10⁻³ per matrix row.
pub fn default_epsilon(n: usize) -> f64 {
    1e-3 * n as f64
}

/// Convergence record of one composition run.
#[derive(Debug, Clone, Serialize)]
pub struct WalkTrace {
    /// Entrywise L1 change after each step.
    pub residuals: Vec<f64>,
    pub steps_taken: usize,
    pub converged: bool,
    pub epsilon: f64,
}

/// Validate that a matrix is row-stochastic: entries finite and
/// non-negative, row sums within tolerance of one. The tolerance scales
/// with the storage precision, since a correctly normalized row stored in
/// f32 already deviates by roughly n·ε.
pub fn check_stochastic<T: Scalar>(m: &DenseMatrix<T>, name: &str) -> Result<()> {
    let n = m.n();
    let tol = (n as f64 * T::EPS).max(1e-6);
    for i in 0..n {
        let mut sum = 0.0f64;
        for v in m.row(i) {
            let v = v.to_f64();
            if !v.is_finite() || v < 0.0 {
                return Err(Error::numeric(format!(
                    "{name} row {i} has invalid entry {v}"
                )));
            }
            sum += v;
        }
        if (sum - 1.0).abs() > tol {
            return Err(Error::numeric(format!(
                "{name} row {i} sums to {sum:.9}, outside stochastic tolerance {tol:.2e}"
            )));
        }
    }
    Ok(())
}

fn check_inputs<T: Scalar>(
    r: &DenseMatrix<T>,
    t: &DenseMatrix<T>,
    alpha: f64,
) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) || !alpha.is_finite() {
        return Err(Error::config(format!("alpha must be in [0, 1], got {alpha}")));
    }
    if r.n() != t.n() {
        return Err(Error::data(format!(
            "transition is {0}x{0} but teleportation is {1}x{1}",
            r.n(),
            t.n()
        )));
    }
    check_stochastic(r, "transition matrix")?;
    check_stochastic(t, "teleportation matrix")?;
    Ok(())
}

/// Run the restart iteration until the entrywise L1 change falls to
/// `epsilon` (default: `default_epsilon(n)`) or `max_steps` is reached.
/// A run that stops on the step budget returns `converged = false` in the
/// trace rather than failing; callers decide whether to warn.
pub fn compose_rwr<T: Scalar>(
    r: &DenseMatrix<T>,
    t: &DenseMatrix<T>,
    alpha: f64,
    epsilon: Option<f64>,
    max_steps: usize,
) -> Result<(DenseMatrix<T>, WalkTrace)> {
    check_inputs(r, t, alpha)?;
    let n = r.n();
    let epsilon = epsilon.unwrap_or_else(|| default_epsilon(n));
    if !(epsilon > 0.0) {
        return Err(Error::config(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    if max_steps == 0 {
        return Err(Error::config("max_steps must be at least 1".to_string()));
    }

    let mut prev = DenseMatrix::<T>::identity(n);
    let mut next = DenseMatrix::<T>::zeros(n);
    let mut trace = WalkTrace {
        residuals: Vec::new(),
        steps_taken: 0,
        converged: false,
        epsilon,
    };
    for _ in 0..max_steps {
        next.data_mut().copy_from_slice(t.data());
        gemm_into(&mut next, alpha, &prev, r, 1.0 - alpha);
        let residual = next.l1_diff(&prev);
        trace.residuals.push(residual);
        trace.steps_taken += 1;
        std::mem::swap(&mut prev, &mut next);
        if residual <= epsilon {
            trace.converged = true;
            break;
        }
    }
    Ok((prev, trace))
}

/// Plain k-step landing probability: Rᵏ by repeated multiplication. The
/// walker never restarts, so this scores by "where does a walk of exactly
/// k hops end up" — the baseline the restart iteration is measured
/// against.
pub fn compose_kstep<T: Scalar>(r: &DenseMatrix<T>, k: usize) -> Result<DenseMatrix<T>> {
    if k == 0 {
        return Err(Error::config("step count must be at least 1".to_string()));
    }
    check_stochastic(r, "transition matrix")?;
    let n = r.n();
    let mut prev = r.clone();
    let mut next = DenseMatrix::<T>::zeros(n);
    for _ in 1..k {
        gemm_into(&mut next, 1.0, &prev, r, 0.0);
        std::mem::swap(&mut prev, &mut next);
    }
    Ok(prev)
}

/// Single update step M₁ = α·R + (1−α)·T, the model trained only up to
/// the first step.
pub fn compose_first_step<T: Scalar>(
    r: &DenseMatrix<T>,
    t: &DenseMatrix<T>,
    alpha: f64,
) -> Result<DenseMatrix<T>> {
    check_inputs(r, t, alpha)?;
    let mut m = t.clone();
    for (mv, rv) in m.data_mut().iter_mut().zip(r.data()) {
        let v = alpha * rv.to_f64() + (1.0 - alpha) * mv.to_f64();
        *mv = T::from_f64(v);
    }
    Ok(m)
}
