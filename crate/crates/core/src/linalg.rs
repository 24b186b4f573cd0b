//! Dense kernels shared by the solvers: SPD solves with a ridge fallback,
//! null-space bases, minimum-norm least squares and a reciprocal condition
//! estimate.
//!
//! Everything here is deterministic and allocation-light enough for the
//! instance sizes the crate targets (a few thousand rows at most).

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Relative cut below which a singular value counts as zero.
pub const DEFAULT_NULL_TOL: f64 = 1e-10;

/// Default `auto` threshold on the reciprocal condition estimate.
pub const DEFAULT_RCOND_THRESHOLD: f64 = 1e-12;

const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is singular and the ridge policy forbids regularization")]
    Singular,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite input")]
    NonFinite,
}

/// How [`spd_solve`] reacts to a (numerically) singular Gram matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RidgePolicy {
    /// Fail with [`LinalgError::Singular`] when the factorization breaks down.
    Never,
    /// Add `1e-8 * trace(G) / m` when the factorization fails or the
    /// reciprocal condition estimate drops below the threshold.
    Auto { rcond_threshold: f64 },
    /// Always add the given ridge.
    Always(f64),
}

impl Default for RidgePolicy {
    fn default() -> Self {
        RidgePolicy::Auto { rcond_threshold: DEFAULT_RCOND_THRESHOLD }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub solution: DVector<f64>,
    /// The ridge actually added to the diagonal; exactly zero when none was.
    pub ridge_used: f64,
    pub estimated_rcond: f64,
}

fn max_asymmetry(g: &DMatrix<f64>) -> f64 {
    let n = g.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((g[(i, j)] - g[(j, i)]).abs());
        }
    }
    worst
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

fn matrix_one_norm(g: &DMatrix<f64>) -> f64 {
    g.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Hager's estimate of `||G^{-1}||_1` given a solver for `G y = b`.
/// `G` is symmetric, so the transposed solve is the same solve.
fn inverse_one_norm_estimate<F>(n: usize, solve: F) -> f64
where
    F: Fn(&DVector<f64>) -> Option<DVector<f64>>,
{
    let mut x = DVector::from_element(n, 1.0 / n as f64);
    let mut estimate = 0.0;
    for _ in 0..5 {
        let Some(y) = solve(&x) else {
            return f64::INFINITY;
        };
        estimate = y.iter().map(|v| v.abs()).sum::<f64>();
        let xi = y.map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
        let Some(z) = solve(&xi) else {
            return f64::INFINITY;
        };
        let (j, zmax) = z.iter().enumerate().fold((0, 0.0f64), |(bj, bv), (k, v)| {
            if v.abs() > bv {
                (k, v.abs())
            } else {
                (bj, bv)
            }
        });
        if zmax <= z.dot(&x) {
            break;
        }
        x = DVector::zeros(n);
        x[j] = 1.0;
    }
    // Higham's alternating-sign safeguard against adversarial cancellation.
    let alt = DVector::from_fn(n, |i, _| {
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        sign * (1.0 + i as f64 / (n.max(2) - 1) as f64)
    });
    if let Some(y) = solve(&alt) {
        let alt_est = 2.0 * y.iter().map(|v| v.abs()).sum::<f64>() / (3.0 * n as f64);
        estimate = estimate.max(alt_est);
    }
    estimate
}

/// Reciprocal 1-norm condition estimate of a symmetric matrix, in `[0, 1]`.
/// Returns 1 for the identity and 0 for an exactly singular matrix.
pub fn rcond_estimate(g: &DMatrix<f64>) -> f64 {
    let n = g.nrows();
    if n == 0 {
        return 1.0;
    }
    let norm = matrix_one_norm(g);
    if norm == 0.0 || !norm.is_finite() {
        return 0.0;
    }
    let inv_norm = if let Some(chol) = g.clone().cholesky() {
        inverse_one_norm_estimate(n, |b| Some(chol.solve(b)))
    } else {
        let lu = g.clone().lu();
        if !lu.is_invertible() {
            return 0.0;
        }
        inverse_one_norm_estimate(n, |b| lu.solve(b))
    };
    if !inv_norm.is_finite() || inv_norm == 0.0 {
        return 0.0;
    }
    (1.0 / (norm * inv_norm)).clamp(0.0, 1.0)
}

fn ridge_for(g: &DMatrix<f64>) -> f64 {
    let m = g.nrows().max(1) as f64;
    let scaled = 1e-8 * g.trace().abs() / m;
    if scaled > 0.0 {
        scaled
    } else {
        1e-8
    }
}

fn with_ridge(g: &DMatrix<f64>, ridge: f64) -> DMatrix<f64> {
    let mut out = g.clone();
    for i in 0..out.nrows() {
        out[(i, i)] += ridge;
    }
    out
}

/// Solves `(G + ridge I) y = b` for symmetric `G`, adding a ridge only as the
/// policy allows.
pub fn spd_solve(
    g: &DMatrix<f64>,
    b: &DVector<f64>,
    policy: RidgePolicy,
) -> Result<SolveOutcome, LinalgError> {
    let m = g.nrows();
    if g.ncols() != m {
        return Err(LinalgError::DimensionMismatch { expected: m, got: g.ncols() });
    }
    if b.len() != m {
        return Err(LinalgError::DimensionMismatch { expected: m, got: b.len() });
    }
    if g.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    let asym = max_asymmetry(g);
    if asym > SYMMETRY_TOL * max_abs(g).max(f64::MIN_POSITIVE) {
        return Err(LinalgError::NotSymmetric(asym));
    }

    let attempt = |mat: &DMatrix<f64>| -> Option<(DVector<f64>, f64)> {
        let chol = mat.clone().cholesky()?;
        let rcond = inverse_one_norm_estimate(m, |rhs| Some(chol.solve(rhs)));
        let rcond = if rcond.is_finite() && rcond > 0.0 {
            (1.0 / (matrix_one_norm(mat) * rcond)).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let y = chol.solve(b);
        y.iter().all(|v| v.is_finite()).then_some((y, rcond))
    };

    match policy {
        RidgePolicy::Never => {
            let (solution, estimated_rcond) = attempt(g).ok_or(LinalgError::Singular)?;
            Ok(SolveOutcome { solution, ridge_used: 0.0, estimated_rcond })
        }
        RidgePolicy::Always(eps) => {
            let (solution, estimated_rcond) =
                attempt(&with_ridge(g, eps)).ok_or(LinalgError::Singular)?;
            Ok(SolveOutcome { solution, ridge_used: eps, estimated_rcond })
        }
        RidgePolicy::Auto { rcond_threshold } => {
            if let Some((solution, estimated_rcond)) = attempt(g) {
                if estimated_rcond >= rcond_threshold {
                    return Ok(SolveOutcome { solution, ridge_used: 0.0, estimated_rcond });
                }
            }
            // Escalate the ridge until the shifted matrix factors cleanly.
            let mut ridge = ridge_for(g);
            for _ in 0..12 {
                if let Some((solution, estimated_rcond)) = attempt(&with_ridge(g, ridge)) {
                    return Ok(SolveOutcome { solution, ridge_used: ridge, estimated_rcond });
                }
                ridge *= 10.0;
            }
            Err(LinalgError::Singular)
        }
    }
}

/// Orthonormal basis (as columns) of the numerical null space of `m`.
///
/// Singular values at or below `tol * sigma_max` count as zero. The matrix is
/// padded with zero rows to square form so the SVD yields a full right basis.
pub fn null_space_basis(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let (r, c) = m.shape();
    if c == 0 {
        return DMatrix::zeros(0, 0);
    }
    let rows = r.max(c);
    let mut padded = DMatrix::zeros(rows, c);
    padded.view_mut((0, 0), (r, c)).copy_from(m);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let cut = tol * sigma_max;
    let null_rows: Vec<usize> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, s)| sigma_max == 0.0 || **s <= cut)
        .map(|(i, _)| i)
        .collect();
    let mut basis = DMatrix::zeros(c, null_rows.len());
    for (k, &row) in null_rows.iter().enumerate() {
        basis.set_column(k, &v_t.row(row).transpose());
    }
    basis
}

/// Minimum-norm least-squares solution of `M v = b`.
pub fn pseudoinverse_apply(m: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return DVector::zeros(c);
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("left singular vectors requested");
    let v_t = svd.v_t.as_ref().expect("right singular vectors requested");
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let cut = sigma_max * (r.max(c) as f64) * f64::EPSILON;
    let mut out = DVector::zeros(c);
    for (k, &sigma) in svd.singular_values.iter().enumerate() {
        if sigma <= cut || sigma == 0.0 {
            continue;
        }
        let coeff = u.column(k).dot(b) / sigma;
        out.axpy(coeff, &v_t.row(k).transpose(), 1.0);
    }
    out
}

/// Numerical rank of `m` from its singular values with a relative cut.
pub fn numerical_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.singular_values();
    let sigma_max = sv.iter().cloned().fold(0.0f64, f64::max);
    if sigma_max == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > tol * sigma_max).count()
}
