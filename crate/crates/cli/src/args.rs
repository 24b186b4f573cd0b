use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use focuss::GeneratorKind;

#[derive(Debug, Parser)]
#[command(name = "focuss", version, about = "FOCUSS sparse recovery experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the solver and write the solution and its trace for each p.
    Solve(RunArgs),
    /// Run the solver, measure the convergence rate and compare it with theory.
    Rate(RunArgs),
    /// Generate a dataset.
    Gen(GenArgs),
    /// Brute-force the global minimizer of sum |s_i|^p on a small instance.
    Oracle(OracleArgs),
    /// Check the quasi-Newton step against the FOCUSS step on random instances.
    NewtonCheck(NewtonCheckArgs),
    /// Time solver runs over a p grid.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Random,
    AppendixA,
    AppendixB,
}

impl From<Kind> for GeneratorKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Random => GeneratorKind::Random,
            Kind::AppendixA => GeneratorKind::AppendixA,
            Kind::AppendixB => GeneratorKind::AppendixB,
        }
    }
}

/// Where the instance comes from: a dataset file, or generator parameters.
#[derive(Debug, Clone, Args)]
pub struct SourceArgs {
    /// Dataset JSON. When absent the instance is generated.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "random")]
    pub kind: Kind,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Planted support size for appendix-b.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 2000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-10)]
    pub step_tol: f64,
    /// Relative zero threshold for costs and support counts.
    #[arg(long, default_value_t = 1e-6)]
    pub zero_threshold: f64,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Exponent; repeat for a grid. Defaults to the dataset's p.
    #[arg(long = "p", allow_negative_numbers = true)]
    pub p: Vec<f64>,
    /// Treat p = 0 as the log measure sum ln|s_i|.
    #[arg(long)]
    pub log_abs: bool,
    /// Random starts per p; the lowest final cost is reported.
    #[arg(long, default_value_t = 1)]
    pub inits: usize,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[arg(long, value_enum, default_value = "random")]
    pub kind: Kind,
    #[arg(long)]
    pub m: usize,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub k: Option<usize>,
    /// Exponent the planted point is stationary for (appendix kinds).
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long = "p")]
    pub p: Vec<f64>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct NewtonCheckArgs {
    #[arg(long, default_value_t = 5)]
    pub m: usize,
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    /// Number of random instances.
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    /// Exponents to cycle through; random in [0.2, 1.9] when absent.
    #[arg(long = "p")]
    pub p: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 125)]
    pub m: usize,
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long = "p", allow_negative_numbers = true)]
    pub p: Vec<f64>,
    #[arg(long, default_value_t = 3)]
    pub inits: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}
