//! The FOCUSS fixed-point iteration and its drivers.
//!
//! One step maps `s` to `W A^T (A W A^T)^{-1} x` where `W` holds the inverse
//! reweighting `1 / weight(s_i)`. Exact zeros stay zero forever.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::linalg::{pseudoinverse_apply, spd_solve, LinalgError, RidgePolicy};
use crate::model::{zero_cut, ProblemInstance, SparsityMeasure, DEFAULT_ZERO_THRESHOLD};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FocussError {
    #[error("reweighted Gram matrix is singular ({0})")]
    SingularGram(String),
    #[error("initial point is identically zero")]
    ZeroInit,
    #[error("initial point has an exact zero at index {0}")]
    ZeroComponent(usize),
    #[error("vector has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite iterate")]
    NonFinite,
    #[error("auxiliary function anchor must be nonzero")]
    ZeroAnchor,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl From<LinalgError> for FocussError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::NonFinite => FocussError::NonFinite,
            other => FocussError::SingularGram(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub measure: SparsityMeasure,
    pub max_iter: usize,
    /// Stop once `||s+ - s|| <= step_tol * (1 + ||s||)`.
    pub step_tol: f64,
    pub ridge_policy: RidgePolicy,
    pub zero_threshold: f64,
    pub record_trace: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            measure: SparsityMeasure::default(),
            max_iter: 500,
            step_tol: 1e-10,
            ridge_policy: RidgePolicy::default(),
            zero_threshold: DEFAULT_ZERO_THRESHOLD,
            record_trace: true,
        }
    }
}

impl SolverConfig {
    pub fn with_measure(measure: SparsityMeasure) -> Self {
        Self { measure, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), FocussError> {
        self.measure.validate().map_err(|e| FocussError::InvalidConfig(e.to_string()))?;
        if self.max_iter == 0 {
            return Err(FocussError::InvalidConfig("max_iter must be >= 1".into()));
        }
        if self.step_tol.is_nan() || self.step_tol <= 0.0 {
            return Err(FocussError::InvalidConfig("step_tol must be > 0".into()));
        }
        if self.zero_threshold.is_nan() || self.zero_threshold < 0.0 {
            return Err(FocussError::InvalidConfig("zero_threshold must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    StepTol,
    MaxIter,
}

/// Iterate history of one run. With `record_trace` off every sequence only
/// holds the final entry.
///
/// A run that stops on `StepTol` ends at the last iterate whose own step
/// fell under the tolerance; that confirming step is not appended.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveTrace {
    pub iterates: Vec<DVector<f64>>,
    pub costs: Vec<f64>,
    pub residuals: Vec<f64>,
    /// `step_norms[t] = ||s^(t+1) - s^(t)||`.
    pub step_norms: Vec<f64>,
    pub support_sizes: Vec<usize>,
    /// Ridge added while computing `s^(t+1)`.
    pub ridges: Vec<f64>,
    pub stop_reason: StopReason,
    pub iterations: usize,
}

/// A step together with the multiplier `(A W A^T + ridge I)^{-1} x`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepParts {
    pub s_next: DVector<f64>,
    pub alpha: DVector<f64>,
    pub ridge: f64,
}

fn check_len(v: &DVector<f64>, n: usize) -> Result<(), FocussError> {
    if v.len() != n {
        return Err(FocussError::DimensionMismatch { expected: n, got: v.len() });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(FocussError::NonFinite);
    }
    Ok(())
}

/// `A diag(w) A^T`, symmetrized.
pub fn weighted_gram(a: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = a.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= w[j];
    }
    let g = scaled * a.transpose();
    (&g + g.transpose()) * 0.5
}

/// One step for an explicit vector of inverse weights.
pub fn step_with_inverse_weights(
    instance: &ProblemInstance,
    inv_w: &DVector<f64>,
    policy: RidgePolicy,
) -> Result<StepParts, FocussError> {
    let a = instance.a();
    check_len(inv_w, instance.n())?;
    if matches!(policy, RidgePolicy::Never) {
        let active = inv_w.iter().filter(|w| **w > 0.0).count();
        if active < instance.m() {
            return Err(FocussError::SingularGram(format!(
                "only {active} nonzero weights for {} rows",
                instance.m()
            )));
        }
    }
    let g = weighted_gram(a, inv_w);
    let out = spd_solve(&g, instance.x(), policy)?;
    let s_next = (a.transpose() * &out.solution).component_mul(inv_w);
    if s_next.iter().any(|v| !v.is_finite()) {
        return Err(FocussError::NonFinite);
    }
    Ok(StepParts { s_next, alpha: out.solution, ridge: out.ridge_used })
}

pub fn inverse_weights(measure: &SparsityMeasure, s: &DVector<f64>) -> DVector<f64> {
    s.map(|v| measure.inverse_weight(v))
}

pub fn focuss_step_parts(
    instance: &ProblemInstance,
    s: &DVector<f64>,
    config: &SolverConfig,
) -> Result<StepParts, FocussError> {
    check_len(s, instance.n())?;
    step_with_inverse_weights(instance, &inverse_weights(&config.measure, s), config.ridge_policy)
}

pub fn focuss_step(
    instance: &ProblemInstance,
    s: &DVector<f64>,
    config: &SolverConfig,
) -> Result<DVector<f64>, FocussError> {
    focuss_step_parts(instance, s, config).map(|p| p.s_next)
}

/// The same step computed as `W^{1/2} (A W^{1/2})^+ x`.
pub fn focuss_step_threeform(
    instance: &ProblemInstance,
    s: &DVector<f64>,
    config: &SolverConfig,
) -> Result<DVector<f64>, FocussError> {
    check_len(s, instance.n())?;
    let half = inverse_weights(&config.measure, s).map(f64::sqrt);
    let mut aw = instance.a().clone();
    for (j, mut col) in aw.column_iter_mut().enumerate() {
        col *= half[j];
    }
    let q = match config.ridge_policy {
        RidgePolicy::Always(eps) => {
            let g = &aw * aw.transpose();
            let g = (&g + g.transpose()) * 0.5;
            let y = spd_solve(&g, instance.x(), RidgePolicy::Always(eps))?.solution;
            aw.transpose() * y
        }
        RidgePolicy::Never => {
            let active = half.iter().filter(|w| **w > 0.0).count();
            if active < instance.m() {
                return Err(FocussError::SingularGram(format!(
                    "only {active} nonzero weights for {} rows",
                    instance.m()
                )));
            }
            pseudoinverse_apply(&aw, instance.x())
        }
        RidgePolicy::Auto { .. } => pseudoinverse_apply(&aw, instance.x()),
    };
    Ok(q.component_mul(&half))
}

/// Runs the iteration from an entrywise-nonzero start.
pub fn solve(
    instance: &ProblemInstance,
    s0: &DVector<f64>,
    config: &SolverConfig,
) -> Result<(DVector<f64>, SolveTrace), FocussError> {
    check_len(s0, instance.n())?;
    if let Some(i) = s0.iter().position(|v| *v == 0.0) {
        if s0.iter().all(|v| *v == 0.0) {
            return Err(FocussError::ZeroInit);
        }
        return Err(FocussError::ZeroComponent(i));
    }
    run(instance, s0.clone(), config)
}

/// Like [`solve`] but accepts starts with exact zeros, which then stay zero.
pub fn solve_with_zeros(
    instance: &ProblemInstance,
    s0: &DVector<f64>,
    config: &SolverConfig,
) -> Result<(DVector<f64>, SolveTrace), FocussError> {
    check_len(s0, instance.n())?;
    if s0.iter().all(|v| *v == 0.0) {
        return Err(FocussError::ZeroInit);
    }
    run(instance, s0.clone(), config)
}

fn support_of(s: &DVector<f64>, threshold: f64) -> usize {
    let cut = zero_cut(s, threshold);
    s.iter().filter(|v| v.abs() > cut).count()
}

fn run(
    instance: &ProblemInstance,
    s0: DVector<f64>,
    config: &SolverConfig,
) -> Result<(DVector<f64>, SolveTrace), FocussError> {
    config.validate()?;
    let measure = config.measure;
    let tau = config.zero_threshold;
    let mut trace = SolveTrace {
        iterates: Vec::new(),
        costs: Vec::new(),
        residuals: Vec::new(),
        step_norms: Vec::new(),
        support_sizes: Vec::new(),
        ridges: Vec::new(),
        stop_reason: StopReason::MaxIter,
        iterations: 0,
    };
    let record = |trace: &mut SolveTrace, s: &DVector<f64>| {
        trace.costs.push(measure.cost(s, tau));
        trace.residuals.push(instance.residual_norm(s));
        trace.support_sizes.push(support_of(s, tau));
        trace.iterates.push(s.clone());
    };
    if config.record_trace {
        record(&mut trace, &s0);
    }

    let mut s = s0;
    let mut last_step = 0.0;
    let mut last_ridge = 0.0;
    for t in 0..config.max_iter {
        let parts = focuss_step_parts(instance, &s, config)?;
        let step = (&parts.s_next - &s).norm();
        last_step = step;
        last_ridge = parts.ridge;
        if step <= config.step_tol * (1.0 + s.norm()) {
            // `s` is a fixed point to tolerance; the confirming step is not
            // counted as an iteration.
            trace.stop_reason = StopReason::StepTol;
            break;
        }
        s = parts.s_next;
        trace.iterations = t + 1;
        if config.record_trace {
            trace.step_norms.push(step);
            trace.ridges.push(parts.ridge);
            record(&mut trace, &s);
        }
    }
    if !config.record_trace {
        trace.step_norms.push(last_step);
        trace.ridges.push(last_ridge);
        record(&mut trace, &s);
    }
    Ok((s, trace))
}

/// `f(s | anchor) = F(|a|) + F'(|a|) / (2|a|) * (s^2 - a^2)`, a quadratic
/// in `s` touching `F` at the anchor.
pub fn auxiliary_value(measure: &SparsityMeasure, s: f64, anchor: f64) -> Result<f64, FocussError> {
    let t = anchor.abs();
    if t == 0.0 {
        return Err(FocussError::ZeroAnchor);
    }
    Ok(measure.atom(t) + measure.derivative(t) / (2.0 * t) * (s * s - t * t))
}

/// Minimum-norm solution with any exact zero replaced by a small entry of
/// random sign.
pub fn default_init<R: Rng + ?Sized>(instance: &ProblemInstance, rng: &mut R) -> DVector<f64> {
    let mut s = pseudoinverse_apply(instance.a(), instance.x());
    let scale = s.amax();
    let fill = if scale > 0.0 { scale * 1e-3 } else { 1e-3 };
    for v in s.iter_mut() {
        if *v == 0.0 {
            *v = if rng.random::<bool>() { fill } else { -fill };
        }
    }
    s
}

/// Standard normal start, redrawn entrywise until nonzero.
pub fn random_init<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| loop {
        let v: f64 = rng.sample(StandardNormal);
        if v != 0.0 {
            break v;
        }
    })
}

/// Standard normal start projected onto `A s = x`. Starting on the
/// constraint set makes the cost non-increasing from the first step.
pub fn random_feasible_init<R: Rng + ?Sized>(
    instance: &ProblemInstance,
    rng: &mut R,
) -> DVector<f64> {
    let r = random_init(instance.n(), rng);
    let correction = pseudoinverse_apply(instance.a(), &(instance.x() - instance.a() * &r));
    let mut s = r + correction;
    for v in s.iter_mut() {
        if *v == 0.0 {
            *v = f64::MIN_POSITIVE;
        }
    }
    s
}
