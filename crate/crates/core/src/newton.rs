//! Saddle-point view of the iteration: the block system
//! `H = [[0, A], [A^T, c Pi]]`, its closed-form inverse, the quasi-Newton
//! step (`c = p`, which reproduces FOCUSS) and the exact-Newton step
//! (`c = p (p - 1)`).

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::focuss::weighted_gram;
use crate::model::ProblemInstance;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NewtonError {
    #[error("component {0} of s is zero, so Pi is undefined")]
    ZeroComponent(usize),
    #[error("the exact Hessian vanishes at p = 1")]
    ExactAtPEqualsOne,
    #[error("the exact-Newton step divides by p - 1 and is undefined at p = 1")]
    PEqualsOne,
    #[error("A Pi^-1 A^T is singular")]
    SingularGram,
    #[error("p must be positive and finite, got {0}")]
    InvalidP(f64),
    #[error("vector has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockVariant {
    Quasi,
    Exact,
}

impl BlockVariant {
    pub fn coefficient(&self, p: f64) -> f64 {
        match self {
            BlockVariant::Quasi => p,
            BlockVariant::Exact => p * (p - 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockSystem {
    pub h: DMatrix<f64>,
    pub c: f64,
    pub variant: BlockVariant,
}

fn check(instance: &ProblemInstance, s: &DVector<f64>, p: f64) -> Result<(), NewtonError> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(NewtonError::InvalidP(p));
    }
    if s.len() != instance.n() {
        return Err(NewtonError::DimensionMismatch { expected: instance.n(), got: s.len() });
    }
    if let Some(i) = s.iter().position(|v| *v == 0.0) {
        return Err(NewtonError::ZeroComponent(i));
    }
    Ok(())
}

/// Diagonal of `Pi`, `|s_i|^{p-2}`.
fn pi_diag(s: &DVector<f64>, p: f64) -> DVector<f64> {
    s.map(|v| v.abs().powf(p - 2.0))
}

/// Diagonal of `Pi^{-1}`, `|s_i|^{2-p}`.
fn pi_inv_diag(s: &DVector<f64>, p: f64) -> DVector<f64> {
    s.map(|v| v.abs().powf(2.0 - p))
}

pub fn assemble_block(
    instance: &ProblemInstance,
    s: &DVector<f64>,
    p: f64,
    variant: BlockVariant,
) -> Result<BlockSystem, NewtonError> {
    check(instance, s, p)?;
    if variant == BlockVariant::Exact && p == 1.0 {
        return Err(NewtonError::ExactAtPEqualsOne);
    }
    let (m, n) = (instance.m(), instance.n());
    let c = variant.coefficient(p);
    let pi = pi_diag(s, p);
    let mut h = DMatrix::zeros(m + n, m + n);
    h.view_mut((0, m), (m, n)).copy_from(instance.a());
    h.view_mut((m, 0), (n, m)).copy_from(&instance.a().transpose());
    for i in 0..n {
        h[(m + i, m + i)] = c * pi[i];
    }
    Ok(BlockSystem { h, c, variant })
}

fn gram_inverse(instance: &ProblemInstance, w: &DVector<f64>) -> Result<DMatrix<f64>, NewtonError> {
    let m = instance.m();
    let chol = weighted_gram(instance.a(), w).cholesky().ok_or(NewtonError::SingularGram)?;
    let inv = chol.solve(&DMatrix::identity(m, m));
    Ok((&inv + inv.transpose()) * 0.5)
}

/// Closed-form inverse of the block system, with `M = A Pi^{-1} A^T`:
/// `[[-c M^-1, M^-1 A Pi^-1], [Pi^-1 A^T M^-1, (Pi^-1 - Pi^-1 A^T M^-1 A Pi^-1) / c]]`.
pub fn block_inverse(
    instance: &ProblemInstance,
    s: &DVector<f64>,
    p: f64,
    variant: BlockVariant,
) -> Result<DMatrix<f64>, NewtonError> {
    check(instance, s, p)?;
    if variant == BlockVariant::Exact && p == 1.0 {
        return Err(NewtonError::ExactAtPEqualsOne);
    }
    let (m, n) = (instance.m(), instance.n());
    let c = variant.coefficient(p);
    let w = pi_inv_diag(s, p);
    let m_inv = gram_inverse(instance, &w)?;
    let mut a_w = instance.a().clone();
    for (j, mut col) in a_w.column_iter_mut().enumerate() {
        col *= w[j];
    }
    let upper_right = &m_inv * &a_w;
    let lower_left = upper_right.transpose();
    let mut lower_right = -(a_w.transpose() * &m_inv * &a_w);
    for i in 0..n {
        lower_right[(i, i)] += w[i];
    }
    lower_right /= c;

    let mut inv = DMatrix::zeros(m + n, m + n);
    inv.view_mut((0, 0), (m, m)).copy_from(&(m_inv * -c));
    inv.view_mut((0, m), (m, n)).copy_from(&upper_right);
    inv.view_mut((m, 0), (n, m)).copy_from(&lower_left);
    inv.view_mut((m, m), (n, n)).copy_from(&lower_right);
    Ok(inv)
}

/// `(alpha+, s+) = H^{-1} (x; 0)` for the quasi-Newton block system.
pub fn quasi_newton_step(
    instance: &ProblemInstance,
    s: &DVector<f64>,
    p: f64,
) -> Result<(DVector<f64>, DVector<f64>), NewtonError> {
    let inv = block_inverse(instance, s, p, BlockVariant::Quasi)?;
    let m = instance.m();
    let rhs = inv.columns(0, m) * instance.x();
    let alpha = rhs.rows(0, m).into_owned();
    let s_next = rhs.rows(m, instance.n()).into_owned();
    Ok((alpha, s_next))
}

/// `(A s - x ; p Pi s + A^T alpha)`, the gradient of
/// `sum |s_i|^p + alpha^T (A s - x)`.
pub fn lagrangian_gradient(
    instance: &ProblemInstance,
    alpha: &DVector<f64>,
    s: &DVector<f64>,
    p: f64,
) -> DVector<f64> {
    let m = instance.m();
    let top = instance.a() * s - instance.x();
    let bottom = s.map(|v| if v == 0.0 { 0.0 } else { p * v.abs().powf(p - 1.0) * v.signum() })
        + instance.a().transpose() * alpha;
    let mut out = DVector::zeros(m + s.len());
    out.rows_mut(0, m).copy_from(&top);
    out.rows_mut(m, s.len()).copy_from(&bottom);
    out
}

/// `s+ = g(s) / (p - 1) + (1 - 1 / (p - 1)) s` where `g` is the FOCUSS map.
pub fn exact_newton_step(
    instance: &ProblemInstance,
    s: &DVector<f64>,
    p: f64,
) -> Result<DVector<f64>, NewtonError> {
    check(instance, s, p)?;
    if p == 1.0 {
        return Err(NewtonError::PEqualsOne);
    }
    let w = pi_inv_diag(s, p);
    let chol = weighted_gram(instance.a(), &w).cholesky().ok_or(NewtonError::SingularGram)?;
    let g = (instance.a().transpose() * chol.solve(instance.x())).component_mul(&w);
    let k = 1.0 / (p - 1.0);
    Ok(g * k + s * (1.0 - k))
}

/// Runs the exact-Newton iterate and records `sum |s_i|^p` after each step,
/// starting with the cost of `s0`. Stops early on a non-finite iterate or
/// one that hits an exact zero.
pub fn newton_divergence_probe(
    instance: &ProblemInstance,
    s0: &DVector<f64>,
    p: f64,
    iters: usize,
) -> Result<Vec<f64>, NewtonError> {
    check(instance, s0, p)?;
    if p == 1.0 {
        return Err(NewtonError::PEqualsOne);
    }
    let cost = |s: &DVector<f64>| s.iter().map(|v| v.abs().powf(p)).sum::<f64>();
    let mut costs = vec![cost(s0)];
    let mut s = s0.clone();
    for _ in 0..iters {
        let next = match exact_newton_step(instance, &s, p) {
            Ok(v) => v,
            Err(NewtonError::ZeroComponent(_)) | Err(NewtonError::SingularGram) => break,
            Err(e) => return Err(e),
        };
        if next.iter().any(|v| !v.is_finite()) {
            break;
        }
        costs.push(cost(&next));
        s = next;
    }
    Ok(costs)
}
