use std::path::PathBuf;
use std::time::Instant;

use focuss::analysis::{analyze_run, TheoryVerdict};
use focuss::datagen::{
    brute_force_oracle, gen_appendix_a, gen_appendix_b, gen_random, DatagenError,
    DEFAULT_ORACLE_MAX_N,
};
use focuss::focuss::{focuss_step, random_init, solve};
use focuss::newton::quasi_newton_step;
use focuss::{
    GeneratedDataset, RidgePolicy, SolveTrace, SolverConfig, SparsityMeasure, StopReason,
};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::args::{
    BenchArgs, GenArgs, Kind, NewtonCheckArgs, OracleArgs, RunArgs, SolverArgs, SourceArgs,
};
use crate::io::{
    ensure_dir, p_tag, read_dataset, write_csv, write_dataset, write_json, BenchRow, OracleFile,
    RateRow, RateSummary, SolutionFile, TraceRow,
};
use crate::CliError;

/// Largest quasi-Newton vs FOCUSS step gap `newton-check` accepts.
pub const NEWTON_CHECK_TOL: f64 = 1e-10;
const BENCH_GRID: [f64; 10] = [0.6, 0.7, 0.8, 0.95, 1.1, 1.3, 1.5, 1.7, 1.9, 1.95];
const STREAM_SALT: u64 = 0x5eed_f0c5_5eed_f0c5;

/// Everything one `solve` or `rate` invocation needs.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub dataset: GeneratedDataset,
    pub grid: Vec<(f64, SparsityMeasure)>,
    pub inits: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub config: SolverConfig,
}

impl ExperimentSpec {
    pub fn from_args(args: &RunArgs) -> Result<Self, CliError> {
        if args.inits == 0 {
            return Err(CliError::Input("--inits must be at least 1".into()));
        }
        let gen_p = match args.p.as_slice() {
            [p] => Some(*p),
            _ => None,
        };
        let dataset = load_source(&args.source, gen_p)?;
        let ps = if args.p.is_empty() {
            match dataset.p {
                Some(p) => vec![p],
                None => {
                    return Err(CliError::Input(
                        "no --p given and the dataset does not carry one".into(),
                    ))
                }
            }
        } else {
            args.p.clone()
        };
        let grid = measure_grid(&ps, args.log_abs)?;
        Ok(Self {
            dataset,
            grid,
            inits: args.inits,
            seed: args.source.seed,
            out_dir: ensure_dir(&args.out_dir)?,
            config: solver_config(&args.solver)?,
        })
    }
}

fn solver_config(args: &SolverArgs) -> Result<SolverConfig, CliError> {
    let config = SolverConfig {
        max_iter: args.max_iter,
        step_tol: args.step_tol,
        zero_threshold: args.zero_threshold,
        ..SolverConfig::default()
    };
    config.validate().map_err(|e| CliError::Input(e.to_string()))?;
    Ok(config)
}

/// Maps exponents to measures: `p < 0` is the negative power, `p = 0` the
/// log measure (only with `log_abs`), `0 < p < 2` the lp norm.
pub fn measure_grid(ps: &[f64], log_abs: bool) -> Result<Vec<(f64, SparsityMeasure)>, CliError> {
    let mut grid: Vec<(f64, SparsityMeasure)> = Vec::with_capacity(ps.len());
    for &p in ps {
        if !p.is_finite() || p >= 2.0 {
            return Err(CliError::Input(format!("p must be finite and below 2, got {p}")));
        }
        if p == 0.0 && !log_abs {
            return Err(CliError::Input(
                "p = 0 selects the log measure; pass --log-abs to use it".into(),
            ));
        }
        if grid.iter().any(|(q, _)| *q == p) {
            return Err(CliError::Input(format!("p = {p} appears twice in the grid")));
        }
        let measure =
            SparsityMeasure::from_exponent(p).map_err(|e| CliError::Input(e.to_string()))?;
        grid.push((p, measure));
    }
    Ok(grid)
}

fn datagen_err(e: DatagenError) -> CliError {
    match e {
        DatagenError::InfeasibleDimensions(_) => CliError::Infeasible(e.to_string()),
        DatagenError::InvalidP(..) | DatagenError::TooLarge { .. } | DatagenError::Model(_) => {
            CliError::Input(e.to_string())
        }
        other => CliError::Solver(other.to_string()),
    }
}

pub fn generate(
    kind: Kind,
    m: usize,
    n: usize,
    k: Option<usize>,
    p: Option<f64>,
    seed: u64,
) -> Result<GeneratedDataset, CliError> {
    let need_p = || p.ok_or_else(|| CliError::Input(format!("--kind {kind:?} needs --p")));
    let dataset = match kind {
        Kind::Random => gen_random(m, n, seed),
        Kind::AppendixA => gen_appendix_a(m, n, need_p()?, seed),
        Kind::AppendixB => {
            let k = k.ok_or_else(|| CliError::Input("--kind appendix-b needs --k".into()))?;
            gen_appendix_b(m, k, n, need_p()?, seed)
        }
    };
    dataset.map_err(datagen_err)
}

fn load_source(source: &SourceArgs, p: Option<f64>) -> Result<GeneratedDataset, CliError> {
    if let Some(path) = &source.input {
        return read_dataset(path);
    }
    let (Some(m), Some(n)) = (source.m, source.n) else {
        return Err(CliError::Input("pass --input, or --m and --n to generate".into()));
    };
    generate(source.kind, m, n, source.k, p, source.seed)
}

/// Start generator for one exponent. The stream depends on `p` itself, not
/// its position in the grid, so reordering a grid leaves each run unchanged.
pub fn init_rng(seed: u64, p: f64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(p.to_bits() ^ STREAM_SALT);
    rng
}

fn stop_label(reason: StopReason) -> &'static str {
    match reason {
        StopReason::StepTol => "step-tol",
        StopReason::MaxIter => "max-iter",
    }
}

fn measure_label(measure: &SparsityMeasure) -> String {
    match measure {
        SparsityMeasure::LpNorm(p) => format!("lp({p})"),
        SparsityMeasure::LogAbs => "log-abs".into(),
        SparsityMeasure::NegPower(p) => format!("neg-power({p})"),
    }
}

struct BestRun {
    solution: DVector<f64>,
    trace: SolveTrace,
    init: usize,
}

/// Runs `inits` random starts and keeps the lowest final cost; ties keep the
/// earlier start.
fn best_run(spec: &ExperimentSpec, p: f64, config: &SolverConfig) -> Result<BestRun, CliError> {
    let instance = &spec.dataset.instance;
    let mut rng = init_rng(spec.seed, p);
    let mut best: Option<BestRun> = None;
    for init in 0..spec.inits {
        let s0 = random_init(instance.n(), &mut rng);
        let (solution, trace) = solve(instance, &s0, config)
            .map_err(|e| CliError::Solver(format!("p={p}, init {init}: {e}")))?;
        let cost = *trace.costs.last().unwrap();
        if best.as_ref().is_none_or(|b| cost < *b.trace.costs.last().unwrap()) {
            best = Some(BestRun { solution, trace, init });
        }
    }
    Ok(best.expect("at least one init"))
}

fn trace_rows(trace: &SolveTrace) -> Vec<TraceRow> {
    (0..trace.iterates.len())
        .map(|t| TraceRow {
            t,
            cost: trace.costs[t],
            residual: trace.residuals[t],
            step_norm: t.checked_sub(1).map(|i| trace.step_norms[i]),
            support: trace.support_sizes[t],
        })
        .collect()
}

fn max_iter_failures(lines: &[(f64, StopReason)], max_iter: usize) -> Result<(), CliError> {
    let hit: Vec<String> = lines
        .iter()
        .filter(|(_, r)| *r == StopReason::MaxIter)
        .map(|(p, _)| format!("p={p}"))
        .collect();
    if hit.is_empty() {
        Ok(())
    } else {
        Err(CliError::Solver(format!(
            "no convergence within {max_iter} iterations for {}",
            hit.join(", ")
        )))
    }
}

pub fn cmd_solve(args: &RunArgs) -> Result<(), CliError> {
    let spec = ExperimentSpec::from_args(args)?;
    let results: Vec<Result<(f64, StopReason, String), CliError>> = spec
        .grid
        .par_iter()
        .map(|&(p, measure)| {
            let config = SolverConfig { measure, ..spec.config };
            let run = best_run(&spec, p, &config)?;
            let tag = p_tag(p);
            let trace = &run.trace;
            let file = SolutionFile {
                p,
                measure: measure_label(&measure),
                solution: run.solution.iter().copied().collect(),
                cost: *trace.costs.last().unwrap(),
                residual: *trace.residuals.last().unwrap(),
                support: *trace.support_sizes.last().unwrap(),
                iterations: trace.iterations,
                stop_reason: stop_label(trace.stop_reason).into(),
                init: run.init,
            };
            write_json(&spec.out_dir.join(format!("solution_{tag}.json")), &file)?;
            write_csv(&spec.out_dir.join(format!("trace_{tag}.csv")), &trace_rows(trace))?;
            let line = format!(
                "p={p} support={} iterations={} cost={:.6e} residual={:.2e} stop={}",
                file.support, file.iterations, file.cost, file.residual, file.stop_reason
            );
            Ok((p, trace.stop_reason, line))
        })
        .collect();
    let mut stops = Vec::new();
    for r in results {
        let (p, reason, line) = r?;
        println!("{line}");
        stops.push((p, reason));
    }
    max_iter_failures(&stops, spec.config.max_iter)
}

pub fn cmd_rate(args: &RunArgs) -> Result<(), CliError> {
    let spec = ExperimentSpec::from_args(args)?;
    let instance = &spec.dataset.instance;
    let results: Vec<Result<(f64, StopReason, String), CliError>> = spec
        .grid
        .par_iter()
        .map(|&(p, measure)| {
            let config = SolverConfig { measure, ..spec.config };
            let run = best_run(&spec, p, &config)?;
            let analysis = analyze_run(instance, &run.trace, &config, config.zero_threshold)
                .map_err(|e| CliError::Solver(format!("p={p}: {e}")))?;
            let report = &analysis.report;
            let rows: Vec<RateRow> = report
                .r_series
                .iter()
                .zip(&report.valid)
                .enumerate()
                .map(|(t, (r, v))| RateRow { t, r_t: *r, valid: *v })
                .collect();
            let summary = RateSummary {
                p,
                limiting_rate: report.limiting_rate,
                classification: report.classification.label().into(),
                support: analysis.support,
                theory_consistent: analysis.verdict.is_consistent(),
                theory_note: match &analysis.verdict {
                    TheoryVerdict::Consistent => None,
                    TheoryVerdict::Inconsistent(why) => Some(why.clone()),
                },
            };
            let tag = p_tag(p);
            write_csv(&spec.out_dir.join(format!("rate_{tag}.csv")), &rows)?;
            write_json(&spec.out_dir.join(format!("summary_{tag}.json")), &summary)?;
            let line = format!(
                "p={p} support={} limiting_rate={:.4} classification={} theory_consistent={}",
                summary.support,
                summary.limiting_rate,
                summary.classification,
                summary.theory_consistent
            );
            Ok((p, run.trace.stop_reason, line))
        })
        .collect();
    let mut stops = Vec::new();
    for r in results {
        let (p, reason, line) = r?;
        println!("{line}");
        stops.push((p, reason));
    }
    max_iter_failures(&stops, spec.config.max_iter)
}

pub fn cmd_gen(args: &GenArgs) -> Result<(), CliError> {
    let dataset = generate(args.kind, args.m, args.n, args.k, args.p, args.seed)?;
    let path = ensure_dir(&args.out_dir)?.join("dataset.json");
    write_dataset(&path, &dataset)?;
    match dataset.certificate {
        Some(c) => println!("{} certificate={c:.3e}", path.display()),
        None => println!("{}", path.display()),
    }
    Ok(())
}

pub fn cmd_oracle(args: &OracleArgs) -> Result<(), CliError> {
    let dataset = load_source(&args.source, None)?;
    let ps = if args.p.is_empty() { vec![dataset.p.unwrap_or(0.5)] } else { args.p.clone() };
    let out_dir = ensure_dir(&args.out_dir)?;
    for p in ps {
        let r =
            brute_force_oracle(&dataset.instance, p, DEFAULT_ORACLE_MAX_N).map_err(datagen_err)?;
        let file = OracleFile {
            p,
            best_cost: r.best_cost,
            best_solution: r.best_solution.iter().copied().collect(),
            support: r.support,
            supports_examined: r.supports_examined,
        };
        write_json(&out_dir.join(format!("oracle_{}.json", p_tag(p))), &file)?;
        println!(
            "p={p} best_cost={:.12e} support={:?} examined={}",
            file.best_cost, file.support, file.supports_examined
        );
    }
    Ok(())
}

/// Largest relative gap between the quasi-Newton and FOCUSS steps over
/// `count` random instances with entrywise-nonzero random points.
pub fn newton_check_error(args: &NewtonCheckArgs) -> Result<f64, CliError> {
    if args.count == 0 {
        return Err(CliError::Input("--count must be at least 1".into()));
    }
    if let Some(p) = args.p.iter().find(|p| !(**p > 0.0 && **p < 2.0)) {
        return Err(CliError::Input(format!("newton-check needs 0 < p < 2, got {p}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut worst = 0.0f64;
    for i in 0..args.count {
        let d =
            gen_random(args.m, args.n, args.seed.wrapping_add(i as u64)).map_err(datagen_err)?;
        let inst = &d.instance;
        let s = random_init(inst.n(), &mut rng);
        let p =
            if args.p.is_empty() { rng.random_range(0.2..=1.9) } else { args.p[i % args.p.len()] };
        let config = SolverConfig {
            ridge_policy: RidgePolicy::Never,
            ..SolverConfig::with_measure(SparsityMeasure::LpNorm(p))
        };
        let direct = focuss_step(inst, &s, &config)
            .map_err(|e| CliError::Solver(format!("instance {i}, p={p}: {e}")))?;
        let (_, via_block) = quasi_newton_step(inst, &s, p)
            .map_err(|e| CliError::Solver(format!("instance {i}, p={p}: {e}")))?;
        worst = worst.max((via_block - direct).norm() / (1.0 + s.norm()));
    }
    Ok(worst)
}

pub fn cmd_newton_check(args: &NewtonCheckArgs) -> Result<(), CliError> {
    let worst = newton_check_error(args)?;
    println!(
        "max step-equivalence error {worst:.3e} over {} instances ({}x{})",
        args.count, args.m, args.n
    );
    if worst <= NEWTON_CHECK_TOL {
        Ok(())
    } else {
        Err(CliError::Solver(format!(
            "step-equivalence error {worst:.3e} exceeds {NEWTON_CHECK_TOL:e}"
        )))
    }
}

pub fn cmd_bench(args: &BenchArgs) -> Result<(), CliError> {
    if args.inits == 0 {
        return Err(CliError::Input("--inits must be at least 1".into()));
    }
    let ps = if args.p.is_empty() { BENCH_GRID.to_vec() } else { args.p.clone() };
    let grid = measure_grid(&ps, false)?;
    let base = solver_config(&args.solver)?;
    let dataset = generate(Kind::Random, args.m, args.n, None, None, args.seed)?;
    let instance = &dataset.instance;
    let mut rows = Vec::new();
    // Sequential on purpose: concurrent runs would distort the timings.
    for (p, measure) in grid {
        let config = SolverConfig { measure, ..base };
        let mut rng = init_rng(args.seed, p);
        let mut millis = Vec::with_capacity(args.inits);
        for init in 0..args.inits {
            let s0 = random_init(instance.n(), &mut rng);
            let start = Instant::now();
            let (_, trace) = solve(instance, &s0, &config)
                .map_err(|e| CliError::Solver(format!("p={p}, init {init}: {e}")))?;
            let ms = start.elapsed().as_secs_f64() * 1e3;
            millis.push(ms);
            rows.push(BenchRow {
                p,
                init,
                iterations: trace.iterations,
                stop_reason: stop_label(trace.stop_reason).into(),
                support: *trace.support_sizes.last().unwrap(),
                cost: *trace.costs.last().unwrap(),
                residual: *trace.residuals.last().unwrap(),
                millis: ms,
            });
        }
        millis.sort_by(f64::total_cmp);
        println!("p={p} median {:.1} ms over {} runs", millis[millis.len() / 2], args.inits);
    }
    write_csv(&ensure_dir(&args.out_dir)?.join("bench.csv"), &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_maps_exponents_to_measures() {
        let grid = measure_grid(&[0.8, -1.0, 0.0], true).unwrap();
        assert_eq!(grid[0].1, SparsityMeasure::LpNorm(0.8));
        assert_eq!(grid[1].1, SparsityMeasure::NegPower(-1.0));
        assert_eq!(grid[2].1, SparsityMeasure::LogAbs);
    }

    #[test]
    fn grid_rejects_bad_exponents() {
        for (ps, log_abs) in
            [(vec![0.0], false), (vec![2.0], true), (vec![f64::NAN], true), (vec![0.5, 0.5], false)]
        {
            let err = measure_grid(&ps, log_abs).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{ps:?}");
        }
    }

    #[test]
    fn init_streams_depend_on_p_only() {
        let mut a = init_rng(4, 0.8);
        let mut b = init_rng(4, 0.8);
        let mut c = init_rng(4, 0.9);
        let (x, y, z): (u64, u64, u64) = (a.random(), b.random(), c.random());
        assert_eq!(x, y);
        assert_ne!(x, z);
    }

    #[test]
    fn generator_errors_map_to_exit_codes() {
        assert_eq!(
            generate(Kind::AppendixA, 9, 20, None, Some(1.3), 0).unwrap_err().exit_code(),
            4
        );
        assert_eq!(generate(Kind::AppendixA, 15, 20, None, None, 0).unwrap_err().exit_code(), 2);
        assert_eq!(generate(Kind::Random, 5, 5, None, None, 0).unwrap_err().exit_code(), 4);
    }
}
