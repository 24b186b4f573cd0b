//! Instance generators and a brute-force l_p oracle for tiny instances.
//!
//! All randomness comes from `ChaCha8Rng::seed_from_u64(seed)` with
//! standard normal draws, so a seed pins a dataset on every platform.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::analysis::polish_reference;
use crate::focuss::{random_init, solve, step_with_inverse_weights, FocussError, SolverConfig};
use crate::linalg::{
    null_space_basis, numerical_rank, pseudoinverse_apply, RidgePolicy, DEFAULT_NULL_TOL,
};
use crate::model::{
    validate_assumptions, GeneratedDataset, GeneratorKind, ModelError, ProblemInstance,
    SparsityMeasure, SubsetBudget,
};

/// Attempts `gen_random` makes before giving up on the assumptions.
pub const RANDOM_ATTEMPTS: usize = 10;

/// Random null-space combinations tried by `gen_appendix_a`.
pub const NULL_VECTOR_DRAWS: usize = 100;

/// Smallest acceptable `min |v_i| / max |v_i|` for the planted null vector.
pub const NULL_VECTOR_SPREAD: f64 = 1e-6;

pub const DEFAULT_ORACLE_MAX_N: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatagenError {
    #[error("infeasible dimensions: {0}")]
    InfeasibleDimensions(String),
    #[error("p = {0} is outside the generator's range {1}")]
    InvalidP(f64, &'static str),
    #[error("no null vector with all entries above {NULL_VECTOR_SPREAD:e} of its max (best ratio {0:e})")]
    DegenerateNullVector(f64),
    #[error("instance assumptions failed after {0} attempts")]
    AssumptionFailure(usize),
    #[error("oracle limited to n <= {max_n}, got n = {n}")]
    TooLarge { n: usize, max_n: usize },
    #[error("no support of size <= m reproduces x exactly")]
    NoExactSolution,
    #[error(transparent)]
    Solver(#[from] FocussError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn gaussian_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn gaussian_vector<R: Rng>(len: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

/// Gaussian `A` and `x`, redrawn until the instance assumptions hold.
pub fn gen_random(m: usize, n: usize, seed: u64) -> Result<GeneratedDataset, DatagenError> {
    if m == 0 || m >= n {
        return Err(DatagenError::InfeasibleDimensions(format!(
            "random instances need 0 < m < n (got m={m}, n={n})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let budget = SubsetBudget { seed, ..SubsetBudget::default() };
    for _ in 0..RANDOM_ATTEMPTS {
        let a = gaussian_matrix(m, n, &mut rng);
        let x = gaussian_vector(m, &mut rng);
        let instance = ProblemInstance::new(a, x)?;
        if validate_assumptions(&instance, &budget).all_ok() {
            return Ok(GeneratedDataset {
                instance,
                p: None,
                planted_solution: None,
                generator: GeneratorKind::Random,
                seed,
                certificate: None,
            });
        }
    }
    Err(DatagenError::AssumptionFailure(RANDOM_ATTEMPTS))
}

fn check_p_between_one_and_two(p: f64) -> Result<(), DatagenError> {
    if p > 1.0 && p < 2.0 {
        Ok(())
    } else {
        Err(DatagenError::InvalidP(p, "(1, 2)"))
    }
}

/// Plants `s* = (s_N; 0)` with support exactly `m` for `1 < p < 2`.
///
/// `A = [A_N | A_O]` is Gaussian; `v` spans part of the null space of
/// `A_O^T A_N^{-T}` and `s_N,i = |v_i|^{1/(p-1)} sign(v_i)`, `x = A_N s_N`.
/// Of [`NULL_VECTOR_DRAWS`] random null-space combinations the one with the
/// most even magnitudes is kept. The certificate is `||A_O^T A_N^{-T} v||_inf`.
pub fn gen_appendix_a(
    m: usize,
    n: usize,
    p: f64,
    seed: u64,
) -> Result<GeneratedDataset, DatagenError> {
    check_p_between_one_and_two(p)?;
    if m == 0 || m >= n || 2 * m <= n {
        return Err(DatagenError::InfeasibleDimensions(format!(
            "appendix-a needs m < n < 2m (got m={m}, n={n}; 2m={})",
            2 * m
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a_n = gaussian_matrix(m, m, &mut rng);
    let a_o = gaussian_matrix(m, n - m, &mut rng);
    let a_n_inv_t = a_n
        .transpose()
        .lu()
        .try_inverse()
        .ok_or_else(|| DatagenError::InfeasibleDimensions("A_N is singular".into()))?;
    let cond = a_o.transpose() * a_n_inv_t;
    let basis = null_space_basis(&cond, DEFAULT_NULL_TOL);
    let d = basis.ncols();
    if d == 0 {
        return Err(DatagenError::DegenerateNullVector(0.0));
    }

    let mut best: Option<(f64, DVector<f64>)> = None;
    for _ in 0..NULL_VECTOR_DRAWS {
        let v = &basis * gaussian_vector(d, &mut rng);
        let big = v.amax();
        if big == 0.0 {
            continue;
        }
        let ratio = v.iter().fold(f64::INFINITY, |acc, x| acc.min(x.abs())) / big;
        if best.as_ref().is_none_or(|(r, _)| ratio > *r) {
            best = Some((ratio, v));
        }
    }
    let (ratio, v) = best.ok_or(DatagenError::DegenerateNullVector(0.0))?;
    if ratio <= NULL_VECTOR_SPREAD {
        return Err(DatagenError::DegenerateNullVector(ratio));
    }
    let v = &v / v.amax();
    let certificate = (&cond * &v).amax();

    let s_n = v.map(|vi| vi.abs().powf(1.0 / (p - 1.0)) * vi.signum());
    let x = &a_n * &s_n;
    let mut a = DMatrix::zeros(m, n);
    a.view_mut((0, 0), (m, m)).copy_from(&a_n);
    a.view_mut((0, m), (m, n - m)).copy_from(&a_o);
    let mut planted = DVector::zeros(n);
    planted.rows_mut(0, m).copy_from(&s_n);
    Ok(GeneratedDataset {
        instance: ProblemInstance::new(a, x)?,
        p: Some(p),
        planted_solution: Some(planted),
        generator: GeneratorKind::AppendixA,
        seed,
        certificate: Some(certificate),
    })
}

/// Plants `s* = (s_N*; 0)` with support `k`, `m < k < n`, for `1 < p < 2`.
///
/// `s_N*` is the polished FOCUSS limit on a Gaussian `A_N` (`m x k`), and
/// the remaining columns are random combinations of an orthonormal basis of
/// the complement of `alpha* = (A_N Pi^{-1} A_N^T)^{-1} x`. The certificate
/// is `||A_O^T alpha*||_inf / ||alpha*||`.
pub fn gen_appendix_b(
    m: usize,
    k: usize,
    n: usize,
    p: f64,
    seed: u64,
) -> Result<GeneratedDataset, DatagenError> {
    check_p_between_one_and_two(p)?;
    if !(m < k && k < n) || n - k > m - 1 {
        return Err(DatagenError::InfeasibleDimensions(format!(
            "appendix-b needs m < k < n and n - k <= m - 1 (got m={m}, k={k}, n={n})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a_n = gaussian_matrix(m, k, &mut rng);
    let x = gaussian_vector(m, &mut rng);
    let sub = ProblemInstance::new(a_n.clone(), x.clone())?;
    let config = SolverConfig {
        max_iter: 2000,
        step_tol: 1e-12,
        record_trace: false,
        ..SolverConfig::with_measure(SparsityMeasure::lp(p)?)
    };
    let (s_rough, _) = solve(&sub, &random_init(k, &mut rng), &config)?;
    let s_n = polish_reference(&sub, &s_rough, &config, 2000)?.solution;

    let w = s_n.map(|v| if v == 0.0 { 0.0 } else { v.abs().powf(2.0 - p) });
    let alpha = step_with_inverse_weights(&sub, &w, RidgePolicy::Never)?.alpha;
    let complement =
        null_space_basis(&DMatrix::from_row_slice(1, m, alpha.as_slice()), DEFAULT_NULL_TOL);
    let mix = gaussian_matrix(complement.ncols(), n - k, &mut rng);
    let a_o = complement * mix;
    let certificate = (a_o.transpose() * &alpha).amax() / alpha.norm();

    let mut a = DMatrix::zeros(m, n);
    a.view_mut((0, 0), (m, k)).copy_from(&a_n);
    a.view_mut((0, k), (m, n - k)).copy_from(&a_o);
    let mut planted = DVector::zeros(n);
    planted.rows_mut(0, k).copy_from(&s_n);
    Ok(GeneratedDataset {
        instance: ProblemInstance::new(a, x)?,
        p: Some(p),
        planted_solution: Some(planted),
        generator: GeneratorKind::AppendixB,
        seed,
        certificate: Some(certificate),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub best_solution: DVector<f64>,
    pub best_cost: f64,
    pub supports_examined: usize,
    /// Indices of the winning support.
    pub support: Vec<usize>,
}

/// Global `sum |s_i|^p` minimizer over all supports of size at most `m`.
///
/// Ties within 1e-12 go to the earliest support in (size, lexicographic)
/// order.
pub fn brute_force_oracle(
    instance: &ProblemInstance,
    p: f64,
    max_n: usize,
) -> Result<OracleResult, DatagenError> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(DatagenError::InvalidP(p, "(0, 1]"));
    }
    let (m, n) = (instance.m(), instance.n());
    if n > max_n {
        return Err(DatagenError::TooLarge { n, max_n });
    }
    let x = instance.x();
    if x.iter().all(|v| *v == 0.0) {
        return Ok(OracleResult {
            best_solution: DVector::zeros(n),
            best_cost: 0.0,
            supports_examined: 0,
            support: Vec::new(),
        });
    }
    let a = instance.a();
    let supports: Vec<Vec<usize>> = (1..=m).flat_map(|k| (0..n).combinations(k)).collect();
    let tol = 1e-9 * x.norm();
    let candidates: Vec<Option<(f64, DVector<f64>)>> = supports
        .par_iter()
        .map(|cols| {
            let sub = a.select_columns(cols.iter());
            if numerical_rank(&sub, 1e-10) < cols.len() {
                return None;
            }
            let y = pseudoinverse_apply(&sub, x);
            if (&sub * &y - x).norm() > tol {
                return None;
            }
            let mut s = DVector::zeros(n);
            for (v, &c) in y.iter().zip(cols) {
                s[c] = *v;
            }
            let cost = s.iter().map(|v| v.abs().powf(p)).sum::<f64>();
            Some((cost, s))
        })
        .collect();

    let mut best: Option<(usize, f64, DVector<f64>)> = None;
    for (i, cand) in candidates.into_iter().enumerate() {
        if let Some((cost, s)) = cand {
            if best.as_ref().is_none_or(|(_, c, _)| cost < c - 1e-12) {
                best = Some((i, cost, s));
            }
        }
    }
    let (idx, best_cost, best_solution) = best.ok_or(DatagenError::NoExactSolution)?;
    Ok(OracleResult {
        best_solution,
        best_cost,
        supports_examined: supports.len(),
        support: supports[idx].clone(),
    })
}
