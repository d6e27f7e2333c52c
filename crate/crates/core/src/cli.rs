//! Command-line front end: `generate`, `solve`, `verify` and `bench`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::blocked::{solve_sequential, ColumnInfo, EigenvectorResult};
use crate::error::{Error, Result};
use crate::generate::{generate, GeneratorConfig, StressMode};
use crate::guard::UNIT_ROUNDOFF;
use crate::io::{read_pencil, read_result, write_file, write_pencil, write_result};
use crate::matrix::Matrix;
use crate::oracle::{solve_naive, solve_scalar_robust, verify, verify_columns, ColumnSpec, VerificationReport};
use crate::partition::make_partition;
use crate::pencil::{extract_eigenvalues, RealSchurPencil, Selection};
use crate::scheduler::{solve_parallel, ExecutionTrace};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

pub const WORKERS_ENV: &str = "GENEIG_WORKERS";
pub const SOLVE_REPORT_FILE: &str = "solve-report.json";
pub const VERIFY_REPORT_FILE: &str = "verify-report.json";

#[derive(Parser, Debug)]
#[command(name = "geneig", version, about = "Eigenvectors of real matrix pencils in generalized real Schur form")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a random pencil in generalized real Schur form.
    Generate(GenerateArgs),
    /// Compute eigenvectors of a pencil.
    Solve(SolveArgs),
    /// Check the relative residuals of computed eigenvectors.
    Verify(VerifyArgs),
    /// Time the scalar and parallel solvers on generated pencils.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub m: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of zero eigenvalues.
    #[arg(long, default_value_t = 0.01)]
    pub zeros: f64,
    /// Fraction of infinite eigenvalues.
    #[arg(long, default_value_t = 0.01)]
    pub inf: f64,
    /// Fraction of eigenvalues in complex-conjugate pairs.
    #[arg(long, default_value_t = 0.25)]
    pub complex: f64,
    /// none, growth or tiny_pivots.
    #[arg(long, default_value = "none")]
    pub stress: StressMode,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    /// Column-by-column robust substitution.
    Scalar,
    /// Tiled solver, one thread.
    Blocked,
    /// Tiled solver on the task scheduler.
    Parallel,
    /// Unprotected substitution (no overflow protection).
    Naive,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    /// Directory holding S.mtx, T.mtx and optionally meta.json.
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory (defaults to the input directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Engine::Parallel)]
    pub engine: Engine,
    /// Worker threads for the parallel engine.
    #[arg(long, env = WORKERS_ENV)]
    pub workers: Option<usize>,
    /// Tile size hint.
    #[arg(long)]
    pub mb: Option<usize>,
    /// Column group width hint.
    #[arg(long)]
    pub nb: Option<usize>,
    /// "all" or a comma-separated list of 1-based diagonal block numbers.
    #[arg(long, default_value = "all", conflicts_with = "select_eigs")]
    pub select: String,
    /// Comma-separated 1-based eigenvalue indices; must not split a complex pair.
    #[arg(long)]
    pub select_eigs: Option<String>,
    /// Write the per-task timing trace of the parallel engine to this file.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Pencil directory.
    #[arg(long)]
    pub input: PathBuf,
    /// Result directory holding V.mtx and eigvals.json (defaults to the input directory).
    #[arg(long)]
    pub result: Option<PathBuf>,
    /// Residual threshold in units of the unit roundoff.
    #[arg(long, default_value_t = 2.0)]
    pub threshold: f64,
    /// Report path (defaults to verify-report.json in the result directory).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "500,1000")]
    pub sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub workers: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub mb: Option<usize>,
    /// JSON report path.
    #[arg(long, default_value = "bench-report.json")]
    pub json: PathBuf,
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) | Error::File { .. } | Error::Json(_) | Error::Parse(_) => EXIT_IO,
        _ => EXIT_USAGE,
    }
}

/// Runs a parsed command and returns the process exit code; messages go to stdout, errors to stderr.
pub fn run(cli: Cli) -> i32 {
    let res = match cli.command {
        Command::Generate(a) => cmd_generate(&a).map(|_| EXIT_OK),
        Command::Solve(a) => cmd_solve(&a).map(|_| EXIT_OK),
        Command::Verify(a) => cmd_verify(&a).map(|r| r.exit_code),
        Command::Bench(a) => cmd_bench(&a).map(|_| EXIT_OK),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let mut cfg = GeneratorConfig::new(a.m, a.seed);
    cfg.fraction_zero = a.zeros;
    cfg.fraction_infinite = a.inf;
    cfg.fraction_complex_pairs = a.complex;
    cfg.stress = a.stress;
    let g = generate(&cfg)?;
    write_pencil(&a.out, &g.pencil, Some(&g))?;
    println!(
        "wrote {} (m = {}, zeros = {}, infinite = {}, complex pairs = {})",
        a.out.display(),
        a.m,
        g.planted.zeros,
        g.planted.infinite,
        g.planted.complex_pairs
    );
    Ok(())
}

fn parse_indices(list: &str) -> Result<Vec<usize>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| match s.parse::<usize>() {
            Ok(v) if v >= 1 => Ok(v - 1),
            _ => Err(Error::InvalidConfig(format!("bad index {s:?} (indices are 1-based)"))),
        })
        .collect()
}

fn selection(pencil: &RealSchurPencil, select: &str, select_eigs: Option<&str>) -> Result<Selection> {
    if let Some(list) = select_eigs {
        let mut mask = vec![false; pencil.m()];
        for i in parse_indices(list)? {
            *mask.get_mut(i).ok_or_else(|| Error::InvalidConfig(format!("eigenvalue {} out of range", i + 1)))? = true;
        }
        return Selection::from_eigenvalue_mask(pencil, &mask);
    }
    if select.trim() == "all" {
        return Ok(Selection::all(pencil.num_blocks()));
    }
    Selection::from_blocks(pencil.num_blocks(), &parse_indices(select)?)
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Contents of `solve-report.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveReport {
    pub engine: Engine,
    pub m: usize,
    pub workers: usize,
    pub mb: usize,
    pub nb: usize,
    pub prescale: (i32, i32),
    pub columns: Vec<ColumnInfo>,
    pub perturbed_columns: usize,
    pub underflow_columns: usize,
    pub failed_columns: usize,
    pub min_exponent: Option<i32>,
    pub max_exponent: Option<i32>,
    pub time_ms: f64,
}

/// Runs one engine on a selection; `workers` only matters for the parallel engine.
pub fn run_engine(
    pencil: &RealSchurPencil,
    sel: &Selection,
    engine: Engine,
    workers: usize,
    mb: Option<usize>,
    nb: Option<usize>,
) -> Result<(EigenvectorResult, Option<ExecutionTrace>)> {
    match engine {
        Engine::Scalar => Ok((solve_scalar_robust(pencil, sel)?, None)),
        Engine::Blocked => Ok((solve_sequential(pencil, &make_partition(pencil, sel, mb, nb)?)?, None)),
        Engine::Parallel => {
            let (r, t) = solve_parallel(pencil, &make_partition(pencil, sel, mb, nb)?, workers)?;
            Ok((r, Some(t)))
        }
        Engine::Naive => Ok((naive_result(pencil, sel)?, None)),
    }
}

fn naive_result(pencil: &RealSchurPencil, sel: &Selection) -> Result<EigenvectorResult> {
    let vectors = solve_naive(pencil, sel)?;
    let eigs = extract_eigenvalues(pencil)?;
    let mut col = 0;
    let columns = sel
        .selected()
        .map(|k| {
            let e = eigs[k];
            let info = ColumnInfo {
                block: k,
                col,
                width: e.block_size,
                eigenvalue: e,
                exponent: 0,
                perturbed: false,
                underflow: false,
                indefinite: e.is_indefinite(),
                error: None,
            };
            col += e.block_size;
            info
        })
        .collect();
    Ok(EigenvectorResult { vectors, columns, prescale: (0, 0) })
}

pub fn cmd_solve(a: &SolveArgs) -> Result<SolveReport> {
    let (pencil, _) = read_pencil(&a.input)?;
    let sel = selection(&pencil, &a.select, a.select_eigs.as_deref())?;
    let workers = a.workers.unwrap_or_else(default_workers);
    if workers == 0 {
        return Err(Error::InvalidConfig("workers must be at least 1".into()));
    }
    let t0 = Instant::now();
    let (result, trace) = run_engine(&pencil, &sel, a.engine, workers, a.mb, a.nb)?;
    let time_ms = t0.elapsed().as_secs_f64() * 1e3;

    let out = a.out.as_deref().unwrap_or(&a.input);
    write_result(out, &result)?;
    let part = make_partition(&pencil, &sel, a.mb, a.nb)?;
    let computed = || result.columns.iter().filter(|c| c.error.is_none() && !c.indefinite);
    let report = SolveReport {
        engine: a.engine,
        m: pencil.m(),
        workers: if a.engine == Engine::Parallel { workers } else { 1 },
        mb: part.mb(),
        nb: part.nb(),
        prescale: result.prescale,
        perturbed_columns: result.columns.iter().filter(|c| c.perturbed).count(),
        underflow_columns: result.columns.iter().filter(|c| c.underflow).count(),
        failed_columns: result.failures().count(),
        min_exponent: computed().map(|c| c.exponent).min(),
        max_exponent: computed().map(|c| c.exponent).max(),
        columns: result.columns.clone(),
        time_ms,
    };
    write_json(&out.join(SOLVE_REPORT_FILE), &report)?;
    if let (Some(path), Some(trace)) = (&a.trace, &trace) {
        write_json(path, trace)?;
    }
    for c in result.failures() {
        eprintln!("warning: block {} (column {}): {}", c.block + 1, c.col + 1, c.error.as_deref().unwrap_or(""));
    }
    println!("solved {} columns of an order-{} pencil in {:.1} ms ({:?})", result.vectors.cols(), pencil.m(), time_ms, a.engine);
    Ok(report)
}

/// Verification outcome with the process exit code.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerifyOutcome {
    pub threshold: f64,
    pub passed: bool,
    pub offending_columns: Vec<usize>,
    pub report: VerificationReport,
    #[serde(skip)]
    pub exit_code: i32,
}

pub fn cmd_verify(a: &VerifyArgs) -> Result<VerifyOutcome> {
    let (pencil, _) = read_pencil(&a.input)?;
    let dir = a.result.as_deref().unwrap_or(&a.input);
    let (v, entries) = read_result(dir)?;
    check_result_shape(&pencil, &v, &entries)?;
    let specs: Vec<ColumnSpec> = entries.iter().map(|e| ColumnSpec { col: e.col, eigenvalue: e.pair(), perturbed: false, underflow: false }).collect();
    let report = verify_columns(&pencil, &v, &specs)?;
    let threshold = a.threshold * UNIT_ROUNDOFF;
    let offending: Vec<usize> = report.offending(threshold).iter().map(|c| c.col + 1).collect();
    let passed = report.passes(threshold);
    let outcome = VerifyOutcome { threshold, passed, offending_columns: offending, report, exit_code: if passed { EXIT_OK } else { EXIT_VERIFY_FAILED } };
    let path = a.report.clone().unwrap_or_else(|| dir.join(VERIFY_REPORT_FILE));
    write_json(&path, &outcome)?;
    println!(
        "max residual {:.3e} ({:.3} u), median {:.3e}, non-finite entries {}",
        outcome.report.max_residual,
        outcome.report.max_residual / UNIT_ROUNDOFF,
        outcome.report.median_residual,
        outcome.report.non_finite_entries
    );
    if passed {
        println!("PASS: all residuals <= {} u", a.threshold);
    } else {
        let list: Vec<String> = outcome.offending_columns.iter().map(|c| c.to_string()).collect();
        println!("FAIL: offending columns (1-based): {}", list.join(", "));
    }
    Ok(outcome)
}

fn check_result_shape(pencil: &RealSchurPencil, v: &Matrix, entries: &[crate::io::EigvalEntry]) -> Result<()> {
    let mismatch = |what: String, got: String| Err(Error::DimensionMismatch { expected: what, got });
    if v.rows() != pencil.m() {
        return mismatch(format!("{} rows in V", pencil.m()), v.rows().to_string());
    }
    let eigs = extract_eigenvalues(pencil)?;
    let mut col = 0;
    for e in entries {
        let Some(p) = eigs.get(e.block) else {
            return mismatch(format!("block index below {}", eigs.len()), e.block.to_string());
        };
        if e.col != col || e.width != p.block_size {
            return mismatch(format!("block {} at column {col} with width {}", e.block, p.block_size), format!("column {} width {}", e.col, e.width));
        }
        col += e.width;
    }
    if col != v.cols() {
        return mismatch(format!("{col} columns in V"), v.cols().to_string());
    }
    Ok(())
}

/// One row of the benchmark table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub m: usize,
    pub workers: usize,
    pub zeros: usize,
    pub inf: usize,
    pub indef: usize,
    pub time_scalar_ms: f64,
    pub time_blocked_ms: f64,
    pub time_parallel_ms: f64,
    /// `time_scalar_ms / time_parallel_ms`
    pub speedup: f64,
    pub max_residual: f64,
    pub median_residual: f64,
    pub perturbed_columns: usize,
    pub underflow_columns: usize,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let t0 = Instant::now();
    let v = f()?;
    Ok((v, t0.elapsed().as_secs_f64() * 1e3))
}

pub fn bench_rows(a: &BenchArgs) -> Result<Vec<RunReport>> {
    if a.repeats == 0 || a.workers.contains(&0) {
        return Err(Error::InvalidConfig("repeats and workers must be at least 1".into()));
    }
    let mut rows = Vec::new();
    for &m in &a.sizes {
        let g = generate(&GeneratorConfig::new(m, a.seed))?;
        let p = &g.pencil;
        let eigs = extract_eigenvalues(p)?;
        let sel = Selection::all(p.num_blocks());
        let part = make_partition(p, &sel, a.mb, None)?;
        let (mut ts, mut tb) = (Vec::new(), Vec::new());
        for _ in 0..a.repeats {
            ts.push(timed(|| solve_scalar_robust(p, &sel))?.1);
            tb.push(timed(|| solve_sequential(p, &part))?.1);
        }
        for &w in &a.workers {
            let mut tp = Vec::new();
            let mut last = None;
            for _ in 0..a.repeats {
                let ((r, _), t) = timed(|| solve_parallel(p, &part, w))?;
                tp.push(t);
                last = Some(r);
            }
            let report = verify(p, last.as_ref().expect("repeats >= 1"))?;
            let (time_scalar_ms, time_parallel_ms) = (median(ts.clone()), median(tp));
            rows.push(RunReport {
                m,
                workers: w,
                zeros: eigs.iter().filter(|e| e.is_zero()).count(),
                inf: eigs.iter().filter(|e| e.is_infinite()).count(),
                indef: eigs.iter().filter(|e| e.is_indefinite()).count(),
                time_scalar_ms,
                time_blocked_ms: median(tb.clone()),
                time_parallel_ms,
                speedup: time_scalar_ms / time_parallel_ms,
                max_residual: report.max_residual,
                median_residual: report.median_residual,
                perturbed_columns: report.perturbed_columns,
                underflow_columns: report.underflow_columns,
            });
        }
    }
    Ok(rows)
}

/// Aligned text table of benchmark rows.
pub fn format_table(rows: &[RunReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>7} {:>7} {:>6} {:>6} {:>6} {:>15} {:>15} {:>16} {:>9} {:>13}",
        "m", "workers", "zeros", "inf", "indef", "time_scalar_ms", "time_blocked_ms", "time_parallel_ms", "speedup", "max_residual"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:>7} {:>7} {:>6} {:>6} {:>6} {:>15.1} {:>15.1} {:>16.1} {:>9.3} {:>13.3e}",
            r.m, r.workers, r.zeros, r.inf, r.indef, r.time_scalar_ms, r.time_blocked_ms, r.time_parallel_ms, r.speedup, r.max_residual
        );
    }
    out
}

pub fn cmd_bench(a: &BenchArgs) -> Result<Vec<RunReport>> {
    let rows = bench_rows(a)?;
    print!("{}", format_table(&rows));
    write_json(&a.json, &rows)?;
    Ok(rows)
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    write_file(path, &serde_json::to_string_pretty(v)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_one_based_lists() {
        assert_eq!(parse_indices("1, 3,2").unwrap(), vec![0, 2, 1]);
        assert!(parse_indices("0").is_err());
        assert!(parse_indices("x").is_err());
    }

    #[test]
    fn selection_by_eigenvalue_rejects_half_pairs() {
        let mut s = Matrix::diag(&[1.0, 2.0, 2.0]);
        s[(1, 2)] = 1.0;
        s[(2, 1)] = -1.0;
        let p = RealSchurPencil::validate(s, Matrix::identity(3)).unwrap();
        assert!(matches!(selection(&p, "all", Some("2")), Err(Error::SelectionSplitsBlock { .. })));
        let sel = selection(&p, "all", Some("2,3")).unwrap();
        assert_eq!(sel.selected().collect::<Vec<_>>(), vec![1]);
        assert_eq!(selection(&p, "2", None).unwrap().selected().collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Parse("x".into())), EXIT_IO);
        assert_eq!(exit_code(&Error::EmptySelection), EXIT_USAGE);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0]), 2.5);
    }

    #[test]
    fn cli_parses() {
        let cli = Cli::try_parse_from(["geneig", "solve", "--input", "d", "--engine", "blocked", "--select", "1,2"]).unwrap();
        match cli.command {
            Command::Solve(a) => {
                assert_eq!(a.engine, Engine::Blocked);
                assert_eq!(a.select, "1,2");
            }
            _ => panic!(),
        }
        assert!(Cli::try_parse_from(["geneig", "generate"]).is_err());
    }
}
