//! Small dense linear-algebra helpers shared by the observers and the
//! assumption estimators.

use nalgebra::Complex;

use crate::{Matrix, Vector};

/// Condition numbers above this are treated as singular.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Operator 2-norm (largest singular value).
pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Ratio of extreme singular values; `inf` for an exactly singular matrix.
pub fn condition_number(m: &Matrix) -> f64 {
    let sv = m.singular_values();
    let (lo, hi) = (sv.min(), sv.max());
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Inverse of a square matrix, refused when the condition estimate exceeds
/// [`CONDITION_LIMIT`]. Returns the condition estimate on failure.
pub fn checked_inverse(m: &Matrix) -> Result<Matrix, f64> {
    let cond = condition_number(m);
    if !cond.is_finite() || cond > CONDITION_LIMIT {
        return Err(cond);
    }
    m.clone().lu().try_inverse().ok_or(cond)
}

/// Solves `m * x = rhs` by LU after checking the condition estimate.
pub fn checked_solve(m: &Matrix, rhs: &Vector) -> Result<Vector, f64> {
    let cond = condition_number(m);
    if !cond.is_finite() || cond > CONDITION_LIMIT {
        return Err(cond);
    }
    m.clone().lu().solve(rhs).ok_or(cond)
}

/// Eigenvalues of a general (possibly non-symmetric) square matrix.
pub fn eigenvalues(m: &Matrix) -> Vec<Complex<f64>> {
    m.complex_eigenvalues().iter().copied().collect()
}

/// Spectral summary used by the contraction checks: extreme real parts and
/// whether any eigenvalue had a non-negligible imaginary part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenSummary {
    pub max_real: f64,
    pub min_real: f64,
    pub has_complex: bool,
}

pub fn eigen_summary(m: &Matrix) -> EigenSummary {
    let eig = eigenvalues(m);
    let scale = spectral_norm(m).max(1.0);
    let mut summary = EigenSummary {
        max_real: f64::NEG_INFINITY,
        min_real: f64::INFINITY,
        has_complex: false,
    };
    for z in eig {
        summary.max_real = summary.max_real.max(z.re);
        summary.min_real = summary.min_real.min(z.re);
        if z.im.abs() > 1e-12 * scale {
            summary.has_complex = true;
        }
    }
    summary
}

/// `‖I − α·(J + β·I)‖₂`, the per-iteration preconditioner contraction factor.
pub fn contraction_factor(alpha: f64, jacobian: &Matrix, beta: f64) -> f64 {
    let n = jacobian.nrows();
    let shifted = jacobian + Matrix::identity(n, n) * beta;
    spectral_norm(&(Matrix::identity(n, n) - shifted * alpha))
}

pub fn all_finite(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}

pub fn matrix_finite(m: &Matrix) -> bool {
    m.iter().all(|x| x.is_finite())
}

pub fn inf_norm(v: &Vector) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Largest absolute row sum.
pub fn matrix_inf_norm(m: &Matrix) -> f64 {
    m.row_iter()
        .map(|row| row.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}
