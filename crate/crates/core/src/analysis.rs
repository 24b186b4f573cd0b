//! Convergence-rate measurement and the local diagnostics of the iteration
//! map: the `h` vector, `G` and `Q` matrices and the analytic Jacobian.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::focuss::{
    focuss_step, step_with_inverse_weights, weighted_gram, FocussError, SolveTrace, SolverConfig,
};
use crate::linalg::RidgePolicy;
use crate::model::{zero_cut, ProblemInstance};

/// Base relative precision floor for `R^(t)` denominators.
pub const BASE_FLOOR: f64 = 1e3 * f64::EPSILON;

const WINDOW: usize = 5;
const SLOPE_WINDOW: usize = 8;
const SUPERLINEAR_SLOPE: f64 = 0.02;
const LINEAR_SPREAD: f64 = 0.05;
const SUBLINEAR_RATE: f64 = 0.95;
const THEORY_RATE_TOL: f64 = 0.05;
const UNIT_RATE_SLACK: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("trace has {0} iterates, at least 3 are needed")]
    TooShort(usize),
    #[error("reference equals iterate {0} exactly, but the run moves on afterwards")]
    DegenerateReference(usize),
    #[error("reference has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Solver(#[from] FocussError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "rate")]
pub enum RateClass {
    Superlinear,
    Linear(f64),
    Sublinear,
    Inconclusive,
}

impl RateClass {
    pub fn label(&self) -> &'static str {
        match self {
            RateClass::Superlinear => "superlinear",
            RateClass::Linear(_) => "linear",
            RateClass::Sublinear => "sublinear",
            RateClass::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    /// `R^(t) = e_{t+1} / e_t`, NaN where `e_t = 0`.
    pub r_series: Vec<f64>,
    /// Both `e_t` and `e_{t+1}` clear the precision floor.
    pub valid: Vec<bool>,
    /// `e_t = ||s^(t) - s*||` for every iterate.
    pub errors: Vec<f64>,
    pub limiting_rate: f64,
    pub classification: RateClass,
    pub reference: DVector<f64>,
    /// Relative floor that was applied.
    pub floor: f64,
}

impl RateReport {
    pub fn valid_rates(&self) -> Vec<f64> {
        self.r_series.iter().zip(&self.valid).filter(|(_, v)| **v).map(|(r, _)| *r).collect()
    }
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Least-squares slope of `ln R` against `ln e`. A positive slope means the
/// ratio keeps shrinking along with the error.
fn log_slope(pairs: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> =
        pairs.iter().filter(|(r, e)| *r > 0.0 && *e > 0.0).map(|(r, e)| (e.ln(), r.ln())).collect();
    let k = pts.len() as f64;
    if pts.len() < 2 {
        return 0.0;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx = pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    if sxx == 0.0 {
        return 0.0;
    }
    pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx
}

/// Classifies the tail of a rate series given `(R^(t), e_t)` pairs.
///
/// Superlinear when `ln R` falls with `ln e` at a slope of at least 0.02
/// over the last eight valid pairs; otherwise linear when the last five
/// ratios spread by less than 0.05; otherwise sublinear when their median
/// exceeds 0.95.
pub fn classify_tail(pairs: &[(f64, f64)]) -> (f64, RateClass) {
    let window = &pairs[pairs.len().saturating_sub(WINDOW)..];
    let rates: Vec<f64> = window.iter().map(|(r, _)| *r).collect();
    let limiting = median(&rates);
    if window.len() < 3 {
        return (limiting, RateClass::Inconclusive);
    }
    let slope = log_slope(&pairs[pairs.len().saturating_sub(SLOPE_WINDOW)..]);
    let spread = rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - rates.iter().cloned().fold(f64::INFINITY, f64::min);
    let class = if slope >= SUPERLINEAR_SLOPE {
        RateClass::Superlinear
    } else if spread < LINEAR_SPREAD {
        RateClass::Linear(limiting)
    } else if limiting > SUBLINEAR_RATE {
        RateClass::Sublinear
    } else {
        RateClass::Inconclusive
    };
    (limiting, class)
}

/// `R^(t)` against a reference point. `floor` is relative to `1 + ||s*||`.
pub fn rate_series(
    iterates: &[DVector<f64>],
    reference: &DVector<f64>,
    floor: f64,
) -> Result<RateReport, AnalysisError> {
    if iterates.len() < 3 {
        return Err(AnalysisError::TooShort(iterates.len()));
    }
    if reference.len() != iterates[0].len() {
        return Err(AnalysisError::DimensionMismatch {
            expected: iterates[0].len(),
            got: reference.len(),
        });
    }
    let errors: Vec<f64> = iterates.iter().map(|s| (s - reference).norm()).collect();
    if let Some(t) = errors.iter().position(|e| *e == 0.0) {
        if t == 0 || errors[t..].iter().any(|e| *e != 0.0) {
            return Err(AnalysisError::DegenerateReference(t));
        }
    }
    let cut = floor * (1.0 + reference.norm());
    let mut r_series = Vec::with_capacity(errors.len() - 1);
    let mut valid = Vec::with_capacity(errors.len() - 1);
    let mut pairs = Vec::new();
    for w in errors.windows(2) {
        let r = if w[0] > 0.0 { w[1] / w[0] } else { f64::NAN };
        let ok = w[0] > cut && w[1] > cut;
        r_series.push(r);
        valid.push(ok);
        if ok {
            pairs.push((r, w[0]));
        }
    }
    let (limiting_rate, classification) = classify_tail(&pairs);
    Ok(RateReport {
        r_series,
        valid,
        errors,
        limiting_rate,
        classification,
        reference: reference.clone(),
        floor,
    })
}

/// A numerically stationary point and the size of its rounding jitter.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub solution: DVector<f64>,
    /// Largest distance from `solution` over ten further steps.
    pub jitter: f64,
    pub polish_steps: usize,
}

impl Reference {
    /// Relative floor: the machine-precision floor, raised to ten times the
    /// observed jitter.
    pub fn floor(&self) -> f64 {
        BASE_FLOOR.max(10.0 * self.jitter / (1.0 + self.solution.norm()))
    }
}

/// Keeps stepping from `s` until the step norm stops reaching new lows for
/// ten steps (at most `max_steps`), then measures the jitter.
pub fn polish_reference(
    instance: &ProblemInstance,
    s: &DVector<f64>,
    config: &SolverConfig,
    max_steps: usize,
) -> Result<Reference, FocussError> {
    let mut cur = s.clone();
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut steps = 0;
    while steps < max_steps {
        let next = focuss_step(instance, &cur, config)?;
        let d = (&next - &cur).norm();
        cur = next;
        steps += 1;
        if d == 0.0 {
            break;
        }
        if d < best {
            best = d;
            stale = 0;
        } else {
            stale += 1;
            if stale >= 10 {
                break;
            }
        }
    }
    let mut jitter = 0.0f64;
    let mut probe = cur.clone();
    for _ in 0..10 {
        probe = focuss_step(instance, &probe, config)?;
        jitter = jitter.max((&probe - &cur).norm());
    }
    Ok(Reference { solution: cur, jitter, polish_steps: steps })
}

/// `#{i : |s_i| > threshold * max(1, ||s||_inf)}`.
pub fn support_count(s: &DVector<f64>, threshold: f64) -> usize {
    let cut = zero_cut(s, threshold);
    s.iter().filter(|v| v.abs() > cut).count()
}

/// Relative zero threshold adapted to the exponent. For `1 < p < 2` the
/// off-support entries at a limit point sit near `rounding^{1/(p-1)}`, so
/// the base threshold is raised to the same power.
pub fn support_threshold(p: f64, base: f64) -> f64 {
    if p > 1.0 && p < 2.0 {
        base.powf(1.0 / (p - 1.0))
    } else {
        base
    }
}

/// Copy of `s` with entries under the relative threshold set to exact zero.
pub fn snap_small(s: &DVector<f64>, threshold: f64) -> DVector<f64> {
    let cut = zero_cut(s, threshold);
    s.map(|v| if v.abs() > cut { v } else { 0.0 })
}

fn lp_inverse_weights(s: &DVector<f64>, p: f64) -> DVector<f64> {
    s.map(|v| if v == 0.0 { 0.0 } else { v.abs().powf(2.0 - p) })
}

/// `h_j = |s_j|^{1-p} sign(s_j) a_j^T (A W A^T)^{-1} x`, zero where `s_j = 0`.
pub fn h_vector(
    instance: &ProblemInstance,
    s: &DVector<f64>,
    p: f64,
) -> Result<DVector<f64>, AnalysisError> {
    let parts = step_with_inverse_weights(instance, &lp_inverse_weights(s, p), RidgePolicy::Never)?;
    let proj = instance.a().transpose() * parts.alpha;
    Ok(DVector::from_fn(s.len(), |j, _| {
        if s[j] == 0.0 {
            0.0
        } else {
            s[j].abs().powf(1.0 - p) * s[j].signum() * proj[j]
        }
    }))
}

/// `G(s) = W A^T (A W A^T)^{-1} A` with `W = diag(|s|^{2-p})`.
pub fn g_matrix(
    instance: &ProblemInstance,
    s: &DVector<f64>,
    p: f64,
) -> Result<DMatrix<f64>, AnalysisError> {
    let a = instance.a();
    let w = lp_inverse_weights(s, p);
    let gram = weighted_gram(a, &w);
    let chol = gram
        .cholesky()
        .ok_or_else(|| FocussError::SingularGram("Cholesky factorization failed".into()))?;
    let solved = chol.solve(a);
    let mut g = a.transpose() * solved;
    for (i, mut row) in g.row_iter_mut().enumerate() {
        row *= w[i];
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationJacobian {
    pub matrix: DMatrix<f64>,
    pub h: DVector<f64>,
    pub q: DMatrix<f64>,
}

/// `(2 - p) (diag(h) - Q)` with `Q = G diag(h)`.
pub fn iteration_jacobian(
    instance: &ProblemInstance,
    s: &DVector<f64>,
    p: f64,
) -> Result<IterationJacobian, AnalysisError> {
    let h = h_vector(instance, s, p)?;
    let mut q = g_matrix(instance, s, p)?;
    for (j, mut col) in q.column_iter_mut().enumerate() {
        col *= h[j];
    }
    let matrix = (DMatrix::from_diagonal(&h) - &q) * (2.0 - p);
    Ok(IterationJacobian { matrix, h, q })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum TheoryVerdict {
    Consistent,
    Inconsistent(String),
}

impl TheoryVerdict {
    pub fn is_consistent(&self) -> bool {
        matches!(self, TheoryVerdict::Consistent)
    }
}

/// Compares a measured rate with what the exponent and support predict:
/// superlinear below 1, no valid ratio above 1 at 1, and for `1 < p < 2`
/// superlinear at support `m` or linear with ratio `2 - p` above it.
pub fn classify_against_theory(
    p: f64,
    support: usize,
    m: usize,
    _n: usize,
    report: &RateReport,
) -> TheoryVerdict {
    use RateClass::*;
    let class = report.classification;
    let lim = report.limiting_rate;
    if class == Inconclusive {
        return TheoryVerdict::Inconsistent("rate classification is inconclusive".into());
    }
    let mismatch = |expected: &str| {
        TheoryVerdict::Inconsistent(format!(
            "expected {expected} for p={p}, support={support}, m={m}; measured {} (limiting rate {lim:.4})",
            class.label()
        ))
    };
    if p < 1.0 {
        if class == Superlinear {
            TheoryVerdict::Consistent
        } else {
            mismatch("superlinear")
        }
    } else if p == 1.0 {
        let worst = report.valid_rates().into_iter().fold(lim, f64::max);
        if worst <= 1.0 + UNIT_RATE_SLACK {
            TheoryVerdict::Consistent
        } else {
            TheoryVerdict::Inconsistent(format!(
                "expected every valid ratio to be at most 1 for p=1; largest is {worst:.6}"
            ))
        }
    } else if p < 2.0 {
        if support <= m {
            if class == Superlinear {
                TheoryVerdict::Consistent
            } else {
                mismatch("superlinear")
            }
        } else {
            match class {
                Linear(rate) if (rate - (2.0 - p)).abs() <= THEORY_RATE_TOL => {
                    TheoryVerdict::Consistent
                }
                _ => mismatch(&format!("linear with ratio {:.4}", 2.0 - p)),
            }
        }
    } else {
        TheoryVerdict::Inconsistent(format!("no rate prediction for p={p}"))
    }
}

/// At most `m` nonzeros for `p <= 1`, at least `n - m + 1` for `1 < p < 2`.
pub fn support_bounds_check(p: f64, support: usize, m: usize, n: usize) -> bool {
    if p <= 1.0 {
        support <= m
    } else if p < 2.0 {
        support + m > n
    } else {
        true
    }
}

/// Everything derived from one finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunAnalysis {
    pub reference: Reference,
    pub report: RateReport,
    /// Support of the reference under [`support_threshold`].
    pub support: usize,
    pub verdict: TheoryVerdict,
    pub bounds_ok: bool,
}

/// Polishes the final iterate, measures the rate series against it and
/// checks the result against theory. `support_base` is the relative zero
/// threshold before exponent scaling.
pub fn analyze_run(
    instance: &ProblemInstance,
    trace: &SolveTrace,
    config: &SolverConfig,
    support_base: f64,
) -> Result<RunAnalysis, AnalysisError> {
    let last = trace.iterates.last().ok_or(AnalysisError::TooShort(0))?;
    let reference = polish_reference(instance, last, config, 2000)?;
    let report = rate_series(&trace.iterates, &reference.solution, reference.floor())?;
    let p = config.measure.exponent();
    let support = support_count(&reference.solution, support_threshold(p, support_base));
    let (m, n) = (instance.m(), instance.n());
    Ok(RunAnalysis {
        verdict: classify_against_theory(p, support, m, n, &report),
        bounds_ok: support_bounds_check(p, support, m, n),
        reference,
        report,
        support,
    })
}
