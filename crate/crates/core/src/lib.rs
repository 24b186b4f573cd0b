//! FOCUSS sparse recovery: the reweighted minimum-norm iteration for
//! underdetermined systems `x = A s`, rate measurement, local diagnostics,
//! the saddle-point (quasi-Newton) view, and dataset generators that plant
//! stationary points with a prescribed support.

pub mod analysis;
pub mod datagen;
pub mod focuss;
pub mod linalg;
pub mod model;
pub mod newton;

pub use analysis::{analyze_run, rate_series, RateClass, RateReport, RunAnalysis};
pub use focuss::{solve, SolveTrace, SolverConfig, StopReason};
pub use linalg::RidgePolicy;
pub use model::{GeneratedDataset, GeneratorKind, ProblemInstance, SparsityMeasure};
