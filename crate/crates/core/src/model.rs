//! Problem instances, sparsity measures, assumption checks and the dataset
//! file schema.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::numerical_rank;

/// Default relative zero threshold: `|s_i| <= tau * max(1, ||s||_inf)`.
pub const DEFAULT_ZERO_THRESHOLD: f64 = 1e-8;

/// Relative singular-value cut used by the rank checks.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("instance must have m <= n, got m={m}, n={n}")]
    NotUnderdetermined { m: usize, n: usize },
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("invalid sparsity measure: {0}")]
    InvalidMeasure(String),
    #[error("dataset schema: {0}")]
    Schema(String),
}

/// The pair `(A, x)` of an underdetermined system `x = A s`.
///
/// Square systems are accepted (they are handy fixtures); the generators
/// only ever produce `m < n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    a: DMatrix<f64>,
    x: DVector<f64>,
}

impl ProblemInstance {
    pub fn new(a: DMatrix<f64>, x: DVector<f64>) -> Result<Self, ModelError> {
        let (m, n) = a.shape();
        if x.len() != m {
            return Err(ModelError::DimensionMismatch(format!(
                "A has {m} rows but x has length {}",
                x.len()
            )));
        }
        if m == 0 {
            return Err(ModelError::DimensionMismatch("A has no rows".into()));
        }
        if m > n {
            return Err(ModelError::NotUnderdetermined { m, n });
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite("A"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite("x"));
        }
        Ok(Self { a, x })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn x(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    pub fn residual_norm(&self, s: &DVector<f64>) -> f64 {
        (&self.a * s - &self.x).norm()
    }
}

/// Diversity functional `F~(s) = sum F(|s_i|)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "p")]
pub enum SparsityMeasure {
    /// `F(s) = |s|^p` with `0 < p < 2`.
    LpNorm(f64),
    /// `F(s) = ln|s|`.
    LogAbs,
    /// `F(s) = -|s|^p` with `p < 0`.
    NegPower(f64),
}

impl Default for SparsityMeasure {
    fn default() -> Self {
        SparsityMeasure::LpNorm(0.8)
    }
}

impl SparsityMeasure {
    pub fn lp(p: f64) -> Result<Self, ModelError> {
        let m = SparsityMeasure::LpNorm(p);
        m.validate()?;
        Ok(m)
    }

    /// Picks the measure matching an exponent: `0 < p < 2` is an l_p norm,
    /// `p < 0` a negative power and `p = 0` the log measure.
    pub fn from_exponent(p: f64) -> Result<Self, ModelError> {
        let m = if p == 0.0 {
            SparsityMeasure::LogAbs
        } else if p < 0.0 {
            SparsityMeasure::NegPower(p)
        } else {
            SparsityMeasure::LpNorm(p)
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match *self {
            SparsityMeasure::LpNorm(p) if !(p > 0.0 && p < 2.0) => {
                Err(ModelError::InvalidMeasure(format!("LpNorm needs 0 < p < 2, got {p}")))
            }
            SparsityMeasure::NegPower(p) if !(p < 0.0 && p.is_finite()) => {
                Err(ModelError::InvalidMeasure(format!("NegPower needs p < 0, got {p}")))
            }
            _ => Ok(()),
        }
    }

    /// Exponent governing the reweighting, `|s|^{2-p}`; 0 for the log measure.
    pub fn exponent(&self) -> f64 {
        match *self {
            SparsityMeasure::LpNorm(p) | SparsityMeasure::NegPower(p) => p,
            SparsityMeasure::LogAbs => 0.0,
        }
    }

    /// Scale `c` with `weight(s) = c |s|^{p-2}`. The l_p measure drops its
    /// factor `p/2` since a measure-wide constant cancels in the iterate.
    fn weight_scale(&self) -> f64 {
        match *self {
            SparsityMeasure::LpNorm(_) => 1.0,
            SparsityMeasure::LogAbs => 0.5,
            SparsityMeasure::NegPower(p) => -p / 2.0,
        }
    }

    /// Diagonal entry of the reweighting matrix, `+inf` at zero.
    pub fn weight(&self, s: f64) -> f64 {
        let t = s.abs();
        if t == 0.0 {
            return f64::INFINITY;
        }
        self.weight_scale() * t.powf(self.exponent() - 2.0)
    }

    /// Reciprocal of [`weight`](Self::weight); exactly zero at zero.
    pub fn inverse_weight(&self, s: f64) -> f64 {
        let t = s.abs();
        if t == 0.0 {
            return 0.0;
        }
        t.powf(2.0 - self.exponent()) / self.weight_scale()
    }

    /// One term `F(|s|)` of the diversity.
    pub fn atom(&self, s: f64) -> f64 {
        let t = s.abs();
        match *self {
            SparsityMeasure::LpNorm(p) => t.powf(p),
            SparsityMeasure::LogAbs => t.ln(),
            SparsityMeasure::NegPower(p) => -t.powf(p),
        }
    }

    /// `F'(t)` for `t > 0`.
    pub fn derivative(&self, t: f64) -> f64 {
        match *self {
            SparsityMeasure::LpNorm(p) => p * t.powf(p - 1.0),
            SparsityMeasure::LogAbs => 1.0 / t,
            SparsityMeasure::NegPower(p) => -p * t.powf(p - 1.0),
        }
    }

    /// Whether entries at (or near) zero have to be left out of the cost.
    pub fn singular_at_zero(&self) -> bool {
        !matches!(self, SparsityMeasure::LpNorm(_))
    }

    /// `F~(s)`. For the log and negative-power measures entries under the
    /// relative zero threshold are skipped, since `F` diverges there.
    pub fn cost(&self, s: &DVector<f64>, zero_threshold: f64) -> f64 {
        if self.singular_at_zero() {
            let cut = zero_cut(s, zero_threshold);
            s.iter().filter(|v| v.abs() > cut).map(|&v| self.atom(v)).sum()
        } else {
            s.iter().map(|&v| self.atom(v)).sum()
        }
    }
}

/// Absolute magnitude at or below which an entry of `s` counts as zero.
pub fn zero_cut(s: &DVector<f64>, threshold: f64) -> f64 {
    threshold * s.amax().max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsetBudget {
    /// Enumerate every subset when there are at most this many.
    pub exhaustive_limit: u64,
    /// Otherwise sample this many subsets uniformly.
    pub samples: usize,
    pub seed: u64,
}

impl Default for SubsetBudget {
    fn default() -> Self {
        Self { exhaustive_limit: 100_000, samples: 1_000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub x_nonzero: bool,
    /// Number of m-column subsets tested for independence.
    pub columns_checked: usize,
    pub columns_ok: bool,
    pub expressibility_ok: bool,
    pub exhaustive: bool,
}

impl AssumptionReport {
    pub fn all_ok(&self) -> bool {
        self.x_nonzero && self.columns_ok && self.expressibility_ok
    }
}

/// `C(n, k)` or `None` once it exceeds `cap`.
fn binomial_capped(n: usize, k: usize, cap: u64) -> Option<u64> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > cap as u128 {
            return None;
        }
    }
    Some(acc as u64)
}

fn subsets(n: usize, k: usize, budget: &SubsetBudget, salt: u64) -> (Vec<Vec<usize>>, bool) {
    match binomial_capped(n, k, budget.exhaustive_limit) {
        Some(_) => ((0..n).combinations(k).collect(), true),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(budget.seed ^ salt);
            let picks = (0..budget.samples)
                .map(|_| {
                    let mut idx = rand::seq::index::sample(&mut rng, n, k).into_vec();
                    idx.sort_unstable();
                    idx
                })
                .collect();
            (picks, false)
        }
    }
}

/// Checks that `x != 0`, that every `m` columns of `A` are independent and
/// that `x` is not a combination of any `m - 1` columns.
pub fn validate_assumptions(instance: &ProblemInstance, budget: &SubsetBudget) -> AssumptionReport {
    let a = instance.a();
    let x = instance.x();
    let (m, n) = (instance.m(), instance.n());

    let (col_sets, col_exhaustive) = subsets(n, m, budget, 0x636f6c73);
    let columns_ok = col_sets.par_iter().all(|cols| {
        let sub = a.select_columns(cols.iter());
        numerical_rank(&sub, RANK_TOL) == m
    });

    let (expr_sets, expr_exhaustive) = subsets(n, m - 1, budget, 0x65787072);
    let expressibility_ok = expr_sets.par_iter().all(|cols| {
        let mut sub = DMatrix::zeros(m, cols.len() + 1);
        for (j, &c) in cols.iter().enumerate() {
            sub.set_column(j, &a.column(c));
        }
        sub.set_column(cols.len(), x);
        numerical_rank(&sub, RANK_TOL) == m
    });

    AssumptionReport {
        x_nonzero: x.iter().any(|&v| v != 0.0),
        columns_checked: col_sets.len(),
        columns_ok,
        expressibility_ok,
        exhaustive: col_exhaustive && expr_exhaustive,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    Random,
    AppendixA,
    AppendixB,
}

/// An instance plus what its generator knows about it.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDataset {
    pub instance: ProblemInstance,
    pub p: Option<f64>,
    pub planted_solution: Option<DVector<f64>>,
    pub generator: GeneratorKind,
    pub seed: u64,
    pub certificate: Option<f64>,
}

/// On-disk JSON layout of a [`GeneratedDataset`]. `A` is row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub m: usize,
    pub n: usize,
    #[serde(default)]
    pub p: Option<f64>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub x: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planted_solution: Option<Vec<f64>>,
    pub generator: GeneratorKind,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<f64>,
}

impl From<&GeneratedDataset> for DatasetFile {
    fn from(d: &GeneratedDataset) -> Self {
        let a = d.instance.a();
        DatasetFile {
            m: d.instance.m(),
            n: d.instance.n(),
            p: d.p,
            a: a.row_iter().map(|r| r.iter().copied().collect()).collect(),
            x: d.instance.x().iter().copied().collect(),
            planted_solution: d.planted_solution.as_ref().map(|s| s.iter().copied().collect()),
            generator: d.generator,
            seed: d.seed,
            certificate: d.certificate,
        }
    }
}

impl TryFrom<DatasetFile> for GeneratedDataset {
    type Error = ModelError;

    fn try_from(f: DatasetFile) -> Result<Self, ModelError> {
        if f.a.len() != f.m {
            return Err(ModelError::Schema(format!(
                "\"A\" has {} rows, expected m={}",
                f.a.len(),
                f.m
            )));
        }
        if let Some(row) = f.a.iter().position(|r| r.len() != f.n) {
            return Err(ModelError::Schema(format!(
                "row {row} of \"A\" has {} entries, expected n={}",
                f.a[row].len(),
                f.n
            )));
        }
        if f.x.len() != f.m {
            return Err(ModelError::Schema(format!(
                "\"x\" has length {}, expected m={}",
                f.x.len(),
                f.m
            )));
        }
        let planted = match f.planted_solution {
            Some(v) if v.len() != f.n => {
                return Err(ModelError::Schema(format!(
                    "\"planted_solution\" has length {}, expected n={}",
                    v.len(),
                    f.n
                )))
            }
            Some(v) => Some(DVector::from_vec(v)),
            None => None,
        };
        let a = DMatrix::from_row_iterator(f.m, f.n, f.a.into_iter().flatten());
        let instance = ProblemInstance::new(a, DVector::from_vec(f.x))?;
        Ok(GeneratedDataset {
            instance,
            p: f.p,
            planted_solution: planted,
            generator: f.generator,
            seed: f.seed,
            certificate: f.certificate,
        })
    }
}

impl GeneratedDataset {
    pub fn planted_residual(&self) -> Option<f64> {
        self.planted_solution.as_ref().map(|s| self.instance.residual_norm(s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn instance_rejects_bad_shapes() {
        let a = DMatrix::zeros(3, 2);
        assert!(matches!(
            ProblemInstance::new(a, DVector::zeros(3)),
            Err(ModelError::NotUnderdetermined { m: 3, n: 2 })
        ));
        let a = DMatrix::zeros(2, 3);
        assert!(ProblemInstance::new(a.clone(), DVector::zeros(3)).is_err());
        let mut x = DVector::zeros(2);
        x[1] = f64::NAN;
        assert!(matches!(ProblemInstance::new(a, x), Err(ModelError::NonFinite("x"))));
    }

    #[test]
    fn measure_constructors_validate() {
        assert!(SparsityMeasure::lp(0.0).is_err());
        assert!(SparsityMeasure::lp(2.0).is_err());
        assert!(SparsityMeasure::lp(1.5).is_ok());
        assert!(SparsityMeasure::NegPower(0.5).validate().is_err());
        assert_eq!(SparsityMeasure::from_exponent(0.0).unwrap(), SparsityMeasure::LogAbs);
        assert_eq!(SparsityMeasure::from_exponent(-1.0).unwrap(), SparsityMeasure::NegPower(-1.0));
    }

    #[test]
    fn weight_examples() {
        assert_eq!(SparsityMeasure::LpNorm(1.0).weight(4.0), 0.25);
        assert_eq!(SparsityMeasure::LogAbs.weight(2.0), 0.125);
        assert_eq!(SparsityMeasure::LpNorm(0.5).weight(1.0), 1.0);
        assert_eq!(SparsityMeasure::LpNorm(0.5).weight(0.0), f64::INFINITY);
    }

    #[test]
    fn inverse_weight_examples() {
        assert_eq!(SparsityMeasure::LpNorm(0.5).inverse_weight(0.0), 0.0);
        assert_eq!(SparsityMeasure::LpNorm(1.0).inverse_weight(3.0), 3.0);
        let log = SparsityMeasure::LogAbs;
        assert_eq!(log.inverse_weight(2.0), 8.0);
        assert_eq!(log.inverse_weight(2.0), 1.0 / log.weight(2.0));
    }

    #[test]
    fn weight_matches_derivative_form() {
        // The reweighting diagonal is F'(|s|) / (2|s|) up to a constant
        // that only the l_p measure drops.
        for (measure, scale) in [
            (SparsityMeasure::LogAbs, 1.0),
            (SparsityMeasure::NegPower(-1.0), 1.0),
            (SparsityMeasure::LpNorm(0.7), 0.35),
        ] {
            for t in [0.1, 0.5, 2.0, 7.0] {
                let direct = measure.derivative(t) / (2.0 * t);
                assert!(close(scale * measure.weight(t), direct, 1e-13));
            }
        }
    }

    #[test]
    fn cost_examples() {
        let v = |xs: &[f64]| DVector::from_row_slice(xs);
        let l1 = SparsityMeasure::LpNorm(1.0);
        let lhalf = SparsityMeasure::LpNorm(0.5);
        assert_eq!(l1.cost(&v(&[1.0, -2.0, 0.0]), DEFAULT_ZERO_THRESHOLD), 3.0);
        assert_eq!(lhalf.cost(&v(&[4.0, 0.0, 0.0]), DEFAULT_ZERO_THRESHOLD), 2.0);
        assert_eq!(lhalf.cost(&v(&[1.0, 1.0, 1.0]), DEFAULT_ZERO_THRESHOLD), 3.0);
    }

    #[test]
    fn log_cost_skips_zeros() {
        let s = DVector::from_row_slice(&[std::f64::consts::E, 0.0, 1e-20]);
        let c = SparsityMeasure::LogAbs.cost(&s, DEFAULT_ZERO_THRESHOLD);
        assert!((c - 1.0).abs() < 1e-15);
        let c = SparsityMeasure::NegPower(-1.0).cost(&s, DEFAULT_ZERO_THRESHOLD);
        assert!((c + 1.0 / std::f64::consts::E).abs() < 1e-15);
    }

    #[test]
    fn zero_cut_is_relative() {
        let s = DVector::from_row_slice(&[100.0, 1e-7]);
        assert_eq!(zero_cut(&s, 1e-8), 1e-6);
        let s = DVector::from_row_slice(&[0.5, 1e-7]);
        assert_eq!(zero_cut(&s, 1e-8), 1e-8);
    }

    #[test]
    fn binomial_cap() {
        assert_eq!(binomial_capped(5, 2, 100), Some(10));
        assert_eq!(binomial_capped(5, 0, 100), Some(1));
        assert_eq!(binomial_capped(200, 125, 100_000), None);
        assert_eq!(binomial_capped(2, 3, 10), Some(0));
    }

    #[test]
    fn zero_x_fails_assumption_one() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0]);
        let inst = ProblemInstance::new(a, DVector::zeros(2)).unwrap();
        let r = validate_assumptions(&inst, &SubsetBudget::default());
        assert!(!r.x_nonzero);
    }

    #[test]
    fn x_equal_to_a_column_breaks_expressibility() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0]);
        let inst = ProblemInstance::new(a, DVector::from_row_slice(&[1.0, 1.0])).unwrap();
        let r = validate_assumptions(&inst, &SubsetBudget::default());
        assert!(r.x_nonzero);
        assert!(r.columns_ok);
        assert!(!r.expressibility_ok);
        assert!(r.exhaustive);
        assert_eq!(r.columns_checked, 3);
    }

    #[test]
    fn gaussian_instance_passes_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let a = DMatrix::from_fn(5, 10, |_, _| rng.sample(StandardNormal));
        let x = DVector::from_fn(5, |_, _| rng.sample(StandardNormal));
        let inst = ProblemInstance::new(a, x).unwrap();
        let r = validate_assumptions(&inst, &SubsetBudget::default());
        assert!(r.all_ok());
        assert!(r.exhaustive);
        assert_eq!(r.columns_checked, 252);
    }

    #[test]
    fn sampled_validation_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = DMatrix::from_fn(8, 30, |_, _| rng.sample(StandardNormal));
        let x = DVector::from_fn(8, |_, _| rng.sample(StandardNormal));
        let inst = ProblemInstance::new(a, x).unwrap();
        let budget = SubsetBudget { exhaustive_limit: 1000, samples: 50, seed: 9 };
        let r1 = validate_assumptions(&inst, &budget);
        let r2 = validate_assumptions(&inst, &budget);
        assert_eq!(r1, r2);
        assert!(!r1.exhaustive);
        assert_eq!(r1.columns_checked, 50);
        assert!(r1.all_ok());
    }

    #[test]
    fn dependent_columns_are_caught() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, 1.0, 2.0, 1.0]);
        let inst = ProblemInstance::new(a, DVector::from_row_slice(&[0.3, 0.7])).unwrap();
        let r = validate_assumptions(&inst, &SubsetBudget::default());
        assert!(!r.columns_ok);
    }

    #[test]
    fn dataset_file_round_trip() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let inst = ProblemInstance::new(a, DVector::from_row_slice(&[1.0, 0.5])).unwrap();
        let ds = GeneratedDataset {
            instance: inst,
            p: Some(1.3),
            planted_solution: Some(DVector::from_row_slice(&[0.1, 0.2, 0.3])),
            generator: GeneratorKind::AppendixA,
            seed: 7,
            certificate: Some(1e-14),
        };
        let file = DatasetFile::from(&ds);
        assert_eq!(file.a[1], vec![4.0, 5.0, 6.0]);
        let back = GeneratedDataset::try_from(file).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn dataset_file_rejects_ragged_rows() {
        let file = DatasetFile {
            m: 2,
            n: 2,
            p: None,
            a: vec![vec![1.0, 0.0], vec![0.0]],
            x: vec![1.0, 1.0],
            planted_solution: None,
            generator: GeneratorKind::Random,
            seed: 0,
            certificate: None,
        };
        assert!(matches!(GeneratedDataset::try_from(file), Err(ModelError::Schema(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn measures() -> impl Strategy<Value = SparsityMeasure> {
            prop_oneof![
                (0.05f64..1.95).prop_map(SparsityMeasure::LpNorm),
                Just(SparsityMeasure::LogAbs),
                (-3.0f64..-0.05).prop_map(SparsityMeasure::NegPower),
            ]
        }

        proptest! {
            #[test]
            fn weight_and_inverse_are_reciprocal(
                measure in measures(),
                mag in -8.0f64..8.0,
                neg in any::<bool>(),
            ) {
                let s = if neg { -(10f64.powf(mag)) } else { 10f64.powf(mag) };
                let prod = measure.weight(s) * measure.inverse_weight(s);
                prop_assert!((prod - 1.0).abs() <= 1e-12);
            }

            #[test]
            fn lp_cost_ignores_order_and_sign(
                p in 0.05f64..1.95,
                vals in proptest::collection::vec(-5.0f64..5.0, 1..12),
                flips in proptest::collection::vec(any::<bool>(), 12),
                rot in 0usize..12,
            ) {
                let measure = SparsityMeasure::LpNorm(p);
                let s = DVector::from_vec(vals.clone());
                let mut other: Vec<f64> = vals
                    .iter()
                    .zip(&flips)
                    .map(|(v, f)| if *f { -v } else { *v })
                    .collect();
                let len = other.len();
                other.rotate_left(rot % len);
                let t = DVector::from_vec(other);
                let (a, b) = (measure.cost(&s, 1e-8), measure.cost(&t, 1e-8));
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
            }
        }
    }
}
