use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use focuss::model::DatasetFile;
use focuss::GeneratorKind;
use focuss_cli::io::{
    read_csv, read_dataset, read_json, write_dataset, write_json, BenchRow, OracleFile, RateRow,
    RateSummary, SolutionFile, TraceRow,
};
use tempfile::TempDir;

/// Runs the binary with a whitespace-separated argument line.
fn focuss(line: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_focuss"))
        .args(line.split_whitespace())
        .output()
        .expect("spawn focuss")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn ok(out: Output) -> Output {
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    out
}

fn gen_fig(dir: &Path) -> String {
    ok(focuss(&format!("gen --m 125 --n 200 --seed 125200 --out-dir {}", dir.display())));
    dir.join("dataset.json").display().to_string()
}

#[test]
fn square_diagonal_fixture_solves_in_one_step() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let fixture = DatasetFile {
        m: 2,
        n: 2,
        p: Some(0.8),
        a: vec![vec![2.0, 0.0], vec![0.0, 4.0]],
        x: vec![2.0, 4.0],
        planted_solution: None,
        generator: GeneratorKind::Random,
        seed: 0,
        certificate: None,
    };
    let input = d.join("square.json");
    write_json(&input, &fixture).unwrap();
    ok(focuss(&format!("solve --input {} --out-dir {}", input.display(), d.display())));

    let sol: SolutionFile = read_json(&d.join("solution_p0.8.json")).unwrap();
    assert!((sol.solution[0] - 1.0).abs() < 1e-14 && (sol.solution[1] - 1.0).abs() < 1e-14);
    assert_eq!(sol.stop_reason, "step-tol");
    let rows: Vec<TraceRow> = read_csv(&d.join("trace_p0.8.csv")).unwrap();
    assert_eq!(rows.iter().map(|r| r.t).collect::<Vec<_>>(), vec![0, 1]);
    assert_eq!(rows[0].step_norm, None);
}

#[test]
fn input_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let d = dir.path().display();
    let missing = focuss(&format!("solve --input {d}/nope.json --p 0.8"));
    assert_eq!(code(&missing), 2);

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"m":2,"n":3,"A":[[1,0,1],[0,1,1]],"x":[1],"generator":"random","seed":0}"#)
        .unwrap();
    let out = focuss(&format!("solve --input {d}/bad.json --p 0.8 --out-dir {d}"));
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("\"x\" has length 1"), "{}", stderr(&out));

    fs::write(dir.path().join("garbage.json"), "not json").unwrap();
    assert_eq!(code(&focuss(&format!("rate --input {d}/garbage.json --p 0.8"))), 2);

    for extra in ["", "--p 0", "--p 2", "--p 0.5 --p 0.5", "--p 0.8 --inits 0"] {
        let out = focuss(&format!("solve --m 3 --n 6 {extra} --out-dir {d}"));
        assert_eq!(code(&out), 2, "{extra}");
    }
    assert_eq!(code(&focuss("solve --bogus")), 2);
}

#[test]
fn log_measure_needs_the_explicit_flag() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(focuss(&format!("solve --m 4 --n 9 --p 0 --log-abs --out-dir {}", d.display())));
    let sol: SolutionFile = read_json(&d.join("solution_p0.json")).unwrap();
    assert_eq!(sol.measure, "log-abs");
}

#[test]
fn running_out_of_iterations_exits_3_after_writing() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let input = gen_fig(d);
    let out =
        focuss(&format!("solve --input {input} --p 0.8 --max-iter 3 --out-dir {}", d.display()));
    assert_eq!(code(&out), 3);
    let sol: SolutionFile = read_json(&d.join("solution_p0.8.json")).unwrap();
    assert_eq!(sol.stop_reason, "max-iter");
    assert_eq!(sol.iterations, 3);
}

#[test]
fn generator_dimensions_and_certificates() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(focuss(&format!("gen --kind appendix-a --m 15 --n 20 --p 1.3 --out-dir {}", d.display())));
    let data = read_dataset(&d.join("dataset.json")).unwrap();
    assert!(data.certificate.unwrap() <= 1e-10);
    assert_eq!(data.generator, GeneratorKind::AppendixA);

    let out = focuss("gen --kind appendix-a --m 9 --n 20 --p 1.3");
    assert_eq!(code(&out), 4);
    assert!(stderr(&out).contains("2m=18"), "{}", stderr(&out));

    let out = focuss("gen --kind appendix-b --m 13 --n 20 --k 10 --p 1.5");
    assert_eq!(code(&out), 4);
    assert_eq!(code(&focuss("gen --kind appendix-b --m 13 --n 20 --p 1.5")), 2);
    assert_eq!(code(&focuss("gen --kind appendix-a --m 15 --n 20 --p 0.5")), 2);
}

#[test]
fn dataset_files_round_trip_exactly() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(focuss(&format!(
        "gen --kind appendix-b --m 13 --n 20 --k 16 --p 1.7 --seed 5 --out-dir {}",
        d.display()
    )));
    let path = d.join("dataset.json");
    let original = fs::read(&path).unwrap();
    let again = d.join("again.json");
    write_dataset(&again, &read_dataset(&path).unwrap()).unwrap();
    assert_eq!(original, fs::read(&again).unwrap());
}

#[test]
fn solve_regenerates_the_sparse_regime() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let input = gen_fig(d);
    ok(focuss(&format!("solve --input {input} --p 0.8 --seed 3 --out-dir {}", d.display())));
    let sol: SolutionFile = read_json(&d.join("solution_p0.8.json")).unwrap();
    assert_eq!(sol.support, 125);

    let rows: Vec<TraceRow> = read_csv(&d.join("trace_p0.8.csv")).unwrap();
    let last = rows.last().unwrap();
    assert_eq!(last.t, sol.iterations);
    assert_eq!(last.cost.to_bits(), sol.cost.to_bits());
    assert_eq!(last.residual.to_bits(), sol.residual.to_bits());
    assert!(rows[1..].iter().all(|r| r.step_norm.is_some()));
}

#[test]
fn rate_grids_match_theory() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let input = gen_fig(d);
    let grid = ["0.6", "0.7", "0.8", "0.95", "1.1", "1.3", "1.5", "1.7", "1.9", "1.95"];
    let ps: String = grid.iter().map(|p| format!(" --p {p}")).collect();
    ok(focuss(&format!("rate --input {input} --seed 7{ps} --out-dir {}", d.display())));
    for p in grid {
        let summary: RateSummary = read_json(&d.join(format!("summary_p{p}.json"))).unwrap();
        let pv: f64 = p.parse().unwrap();
        assert!(summary.theory_consistent, "p={p}: {:?}", summary.theory_note);
        if pv < 1.0 {
            assert_eq!(summary.classification, "superlinear");
            assert_eq!(summary.support, 125);
        } else {
            assert!((summary.limiting_rate - (2.0 - pv)).abs() <= 0.05, "p={p}");
            assert_eq!(summary.support, 200);
        }
        let rows: Vec<RateRow> = read_csv(&d.join(format!("rate_p{p}.csv"))).unwrap();
        assert!(rows.iter().filter(|r| r.valid).count() >= 3);
    }
}

#[test]
fn unit_exponent_rates_stay_below_one() {
    for m in [5, 10, 15, 20, 25] {
        let dir = TempDir::new().unwrap();
        let d = dir.path();
        ok(focuss(&format!(
            "rate --m {m} --n 30 --seed {} --p 1 --max-iter 20000 --out-dir {}",
            100 + m,
            d.display()
        )));
        let summary: RateSummary = read_json(&d.join("summary_p1.json")).unwrap();
        let lim = summary.limiting_rate;
        assert!(lim > 0.0 && lim < 1.0, "m={m}: {lim}");
        let rows: Vec<RateRow> = read_csv(&d.join("rate_p1.csv")).unwrap();
        assert!(rows.iter().filter(|r| r.valid).all(|r| r.r_t <= 1.0 + 1e-6));
    }
}

#[test]
fn newton_check_passes_on_default_instances() {
    let out = ok(focuss("newton-check"));
    assert!(String::from_utf8_lossy(&out.stdout).contains("over 100 instances (5x8)"));
}

#[test]
fn oracle_writes_its_result() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(focuss(&format!("oracle --m 3 --n 6 --seed 2 --p 0.5 --out-dir {}", d.display())));
    let r: OracleFile = read_json(&d.join("oracle_p0.5.json")).unwrap();
    assert!(r.support.len() <= 3);
    assert_eq!(r.best_solution.len(), 6);

    let wide = focuss(&format!("oracle --m 3 --n 30 --p 0.5 --out-dir {}", d.display()));
    assert_eq!(code(&wide), 2);
}

#[test]
fn bench_writes_one_row_per_run() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(focuss(&format!("bench --m 6 --n 12 --p 0.8 --p 1.5 --inits 2 --out-dir {}", d.display())));
    let rows: Vec<BenchRow> = read_csv(&d.join("bench.csv")).unwrap();
    assert_eq!(rows.len(), 4);
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn outputs_are_byte_identical_across_runs_and_grid_orders() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for (dir, grid) in [(&a, "--p 0.5 --p 1.4"), (&b, "--p 1.4 --p 0.5")] {
        for cmd in ["solve", "rate"] {
            ok(focuss(&format!(
                "{cmd} --m 10 --n 18 --seed 11 --inits 3 {grid} --out-dir {}",
                dir.path().display()
            )));
        }
    }
    let (fa, fb) = (dir_bytes(a.path()), dir_bytes(b.path()));
    assert_eq!(fa.len(), 8);
    assert_eq!(fa, fb);
}
