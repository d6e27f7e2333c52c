//! Acceptance criteria. Prints one `[PASS]`, `[FAIL]` or `[SKIP]` line per
//! criterion and exits with a failure status if any criterion fails.
//! Positional arguments select criteria by name substring.

mod common;

use std::time::{Duration, Instant};

use common::{bitwise_equal, check_division, check_update, default_pencil};
use geneig::blocked::{solve_sequential, EigenvectorResult};
use geneig::generate::{generate, generate_stress_growth, GeneratorConfig};
use geneig::guard::{protect_division, protect_update, stored_norm_violations, OMEGA, UNIT_ROUNDOFF};
use geneig::io::{read_pencil, write_pencil, write_result};
use geneig::matrix::Matrix;
use geneig::oracle::{aligned_difference, solve_naive, solve_scalar_robust, verify};
use geneig::partition::make_partition;
use geneig::pencil::{extract_eigenvalues, RealSchurPencil, Selection};
use geneig::scheduler::solve_parallel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const U: f64 = UNIT_ROUNDOFF;
const RESIDUAL_TIGHT: f64 = 2.0 * U;
const RESIDUAL_LOOSE: f64 = 10.0 * U;
const TIGHT_FRACTION: f64 = 0.90;
const EQUIVALENCE_FACTOR: f64 = 100.0;
const PROTECT_CASES: usize = 1_000_000;
const MIN_PARALLEL_SPEEDUP: f64 = 3.0;
const MIN_BLOCKING_SPEEDUP: f64 = 1.5;
const SPEEDUP_CORES: usize = 8;

fn workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn report(n: usize, pass: bool, detail: &str, start: Instant, budget: Duration) -> bool {
    let elapsed = start.elapsed();
    let in_time = elapsed <= budget;
    let tag = if pass && in_time { "PASS" } else { "FAIL" };
    let late = if in_time { "" } else { ", over budget" };
    println!("[{tag}] criterion {n}: {detail}; {:.1} s (budget {} s{late})", elapsed.as_secs_f64(), budget.as_secs());
    pass && in_time
}

fn all(p: &RealSchurPencil) -> Selection {
    Selection::all(p.num_blocks())
}

fn blocked(p: &RealSchurPencil, sel: &Selection, mb: Option<usize>, nb: Option<usize>, workers: Option<usize>) -> EigenvectorResult {
    let part = make_partition(p, sel, mb, nb).unwrap();
    match workers {
        None => solve_sequential(p, &part).unwrap(),
        Some(w) => solve_parallel(p, &part, w).unwrap().0,
    }
}

fn criterion_1_residuals() -> bool {
    let start = Instant::now();
    let (mut total, mut tight, mut worst, mut failures) = (0usize, 0usize, 0.0f64, 0usize);
    for m in [100, 500, 1000, 2000] {
        for seed in 0..5 {
            let p = default_pencil(m, seed);
            let r = blocked(&p, &all(&p), None, None, Some(workers()));
            failures += r.failures().count();
            let rep = verify(&p, &r).unwrap();
            for c in rep.columns.iter().filter(|c| !c.skipped) {
                total += 1;
                let res = if c.finite { c.residual } else { f64::INFINITY };
                tight += (res < RESIDUAL_TIGHT) as usize;
                worst = worst.max(res);
            }
        }
    }
    let frac = tight as f64 / total as f64;
    let pass = failures == 0 && frac >= TIGHT_FRACTION && worst < RESIDUAL_LOOSE;
    let detail = format!(
        "{tight}/{total} columns ({:.2}%) below 2u (need >= {:.0}%), max residual {:.2e} u (need < 10 u), {failures} failed columns",
        100.0 * frac,
        100.0 * TIGHT_FRACTION,
        worst / U
    );
    report(1, pass, &detail, start, Duration::from_secs(120))
}

fn criterion_2_oracle_equivalence() -> bool {
    let start = Instant::now();
    let mut worst_ratio = 0.0f64;
    let mut runs = 0;
    for (m, seed) in [(60, 11), (200, 12), (350, 13), (500, 14)] {
        let p = default_pencil(m, seed);
        let reference = solve_scalar_robust(&p, &all(&p)).unwrap();
        let tol = EQUIVALENCE_FACTOR * U * m as f64;
        for (mb, nb) in [(Some(32), Some(8)), (Some(96), Some(24))] {
            for w in [None, Some(4)] {
                let r = blocked(&p, &all(&p), mb, nb, w);
                assert_eq!(r.eigenvalues(), reference.eigenvalues());
                for c in r.columns.iter().filter(|c| !c.indefinite) {
                    let d = aligned_difference(&r.vectors, &reference.vectors, c.col, c.width);
                    worst_ratio = worst_ratio.max(d / tol);
                }
                runs += 1;
            }
        }
    }
    let detail = format!("{runs} blocked runs, max column difference {worst_ratio:.2e} x (100 u m)");
    report(2, worst_ratio <= 1.0, &detail, start, Duration::from_secs(60))
}

fn criterion_3_overflow_robustness() -> bool {
    let start = Instant::now();
    let before = stored_norm_violations();
    let (mut naive_overflows, mut robust_finite, mut worst) = (0, 0, 0.0f64);
    let sizes: Vec<usize> = (0..10).map(|i| 20 + 20 * i).collect();
    for (i, &m) in sizes.iter().enumerate() {
        let p = generate_stress_growth(m, 100 + i as u64).unwrap();
        let sel = all(&p);
        let naive = solve_naive(&p, &sel).unwrap();
        naive_overflows += !naive.is_finite() as usize;
        let scalar = solve_scalar_robust(&p, &sel).unwrap();
        let tiled = blocked(&p, &sel, Some(16), Some(8), Some(3));
        for r in [&scalar, &tiled] {
            let rep = verify(&p, r).unwrap();
            robust_finite += (r.vectors.is_finite() && r.failures().count() == 0) as usize;
            worst = worst.max(rep.max_residual);
        }
    }
    let violations = stored_norm_violations() - before;
    let instrumented = cfg!(debug_assertions);
    let n = sizes.len();
    let pass = naive_overflows == n && robust_finite == 2 * n && violations == 0 && worst < RESIDUAL_LOOSE && instrumented;
    let detail = format!(
        "naive non-finite on {naive_overflows}/{n}, robust all-finite on {robust_finite}/{}, stored-norm violations {violations} (instrumentation {}), max residual {:.2e} u (need < 10 u)",
        2 * n,
        if instrumented { "on" } else { "off" },
        worst / U
    );
    report(3, pass, &detail, start, Duration::from_secs(30))
}

fn result_bytes(p: &RealSchurPencil, mb: Option<usize>, workers: usize, dir: &std::path::Path) -> Vec<Vec<u8>> {
    let r = blocked(p, &all(p), mb, None, Some(workers));
    let out = dir.join(format!("m{}-w{workers}", p.m()));
    write_result(&out, &r).unwrap();
    let files: Vec<Vec<u8>> = ["V.mtx", "eigvals.json"].iter().map(|f| std::fs::read(out.join(f)).unwrap()).collect();
    std::fs::remove_dir_all(&out).unwrap();
    files
}

fn criterion_4_determinism() -> bool {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut identical = true;
    let mut checked = Vec::new();
    for (m, mb) in [(500, Some(64)), (2000, None)] {
        let p = default_pencil(m, 21);
        let base = result_bytes(&p, mb, 1, dir.path());
        for w in [2, 8] {
            identical &= result_bytes(&p, mb, w, dir.path()) == base;
        }
        checked.push(format!("m = {m} ({} bytes)", base.iter().map(Vec::len).sum::<usize>()));
    }
    let detail = format!("output files for workers 1, 2, 8 byte-identical: {identical} [{}]", checked.join(", "));
    report(4, identical, &detail, start, Duration::from_secs(120))
}

fn time<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t0 = Instant::now();
    let r = f();
    (r, t0.elapsed().as_secs_f64())
}

fn criterion_5_desk_scale_speedup() -> bool {
    let start = Instant::now();
    let p = default_pencil(4000, 31);
    let sel = all(&p);
    let cores = workers();
    let (tiled, t_blocked) = time(|| blocked(&p, &sel, None, None, None));
    let (scalar, t_scalar) = time(|| solve_scalar_robust(&p, &sel).unwrap());
    assert_eq!(tiled.eigenvalues(), scalar.eigenvalues());
    let blocking = t_scalar / t_blocked;
    let mut pass = blocking >= MIN_BLOCKING_SPEEDUP;
    let mut detail = format!("blocked {t_blocked:.2} s vs scalar {t_scalar:.2} s at m = 4000: {blocking:.2}x (need >= {MIN_BLOCKING_SPEEDUP}x)");
    if cores >= SPEEDUP_CORES {
        let (_, t1) = time(|| blocked(&p, &sel, None, None, Some(1)));
        let (_, t8) = time(|| blocked(&p, &sel, None, None, Some(SPEEDUP_CORES)));
        let speedup = t1 / t8;
        pass &= speedup >= MIN_PARALLEL_SPEEDUP;
        detail += &format!("; 8 workers {speedup:.2}x over 1 (need >= {MIN_PARALLEL_SPEEDUP}x)");
    } else {
        println!("[SKIP] criterion 5 (8-worker speedup): {cores} hardware thread(s) available, {SPEEDUP_CORES} required");
        detail += "; 8-worker part skipped";
    }
    report(5, pass, &detail, start, Duration::from_secs(600))
}

/// `±2^k * f`, `f` uniform in [1, 2), with occasional exact zeros and subnormals.
fn random_magnitude(rng: &mut ChaCha8Rng) -> f64 {
    match rng.gen_range(0..40) {
        0 => 0.0,
        1 => f64::from_bits(rng.gen_range(1..1u64 << 52)),
        2 => OMEGA,
        3 => OMEGA / 2.0,
        _ => libm::scalbn(rng.gen_range(1.0..2.0), rng.gen_range(-1074..1024)),
    }
}

/// Values clustered around the decision boundaries, relative to `OMEGA`.
fn near_boundary(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    let v = scale * (1.0 + rng.gen_range(-64.0..64.0) * f64::EPSILON);
    if v.is_finite() {
        v
    } else {
        OMEGA
    }
}

fn criterion_6_protect_functions() -> bool {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut failures: Vec<String> = Vec::new();
    let mut scaled = [0usize; 2];
    let mut record = |r: Result<(), String>| {
        if let Err(e) = r {
            failures.push(e);
        }
    };
    for i in 0..PROTECT_CASES {
        let t = if rng.gen_range(0..8) == 0 { libm::scalbn(rng.gen_range(1.0..2.0), rng.gen_range(-1022..-900)) } else { random_magnitude(&mut rng) };
        let t = if t == 0.0 { f64::MIN_POSITIVE } else { t };
        let b = if i % 2 == 0 { random_magnitude(&mut rng) } else { near_boundary(&mut rng, (t * OMEGA).min(OMEGA)) };
        match protect_division(b, t) {
            Ok(xi) => {
                scaled[0] += (xi.exponent() < 0) as usize;
                record(check_division(b, t, xi.exponent()))
            }
            Err(e) => record(Err(format!("protect_division({b:e}, {t:e}) returned {e}"))),
        }
    }
    let division_failures = failures.len();
    let mut record = |r: Result<(), String>| {
        if let Err(e) = r {
            failures.push(e);
        }
    };
    for i in 0..PROTECT_CASES {
        let (y, t, x) = if i % 2 == 0 {
            (random_magnitude(&mut rng).min(OMEGA), random_magnitude(&mut rng), random_magnitude(&mut rng))
        } else {
            // y + t x close to OMEGA
            let share = rng.gen_range(0.0..1.0);
            let t = libm::scalbn(rng.gen_range(1.0..2.0), rng.gen_range(-200..200));
            let y = near_boundary(&mut rng, OMEGA * share);
            let x = near_boundary(&mut rng, (OMEGA * (1.0 - share)) / t).min(OMEGA);
            (y.min(OMEGA), t, x)
        };
        if !(y <= OMEGA && x <= OMEGA && t <= OMEGA) {
            continue;
        }
        match protect_update(y, t, x) {
            Ok(xi) => {
                scaled[1] += (xi.exponent() < 0) as usize;
                record(check_update(y, t, x, xi.exponent()))
            }
            Err(e) => record(Err(format!("protect_update({y:e}, {t:e}, {x:e}) returned {e}"))),
        }
    }
    let update_failures = failures.len() - division_failures;
    for f in failures.iter().take(5) {
        println!("  {f}");
    }
    let detail = format!(
        "{PROTECT_CASES} cases per function ({} and {} needed scaling), exact postcondition failures: division {division_failures}, update {update_failures}",
        scaled[0], scaled[1]
    );
    report(6, failures.is_empty(), &detail, start, Duration::from_secs(30))
}

fn columns(a: &Matrix, col: usize, width: usize) -> Matrix {
    let m = a.rows();
    Matrix::from_col_major(m, width, a.as_slice()[col * m..(col + width) * m].to_vec())
}

fn criterion_7_selection_independence() -> bool {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut matches = 0u64;
    let cases = 20u64;
    for case in 0..cases {
        let m = rng.gen_range(50..400);
        let p = default_pencil(m, 700 + case);
        let (mb, nb) = (Some(rng.gen_range(8..80)), Some(rng.gen_range(2..24)));
        let full = blocked(&p, &all(&p), mb, nb, Some(workers()));
        let k = rng.gen_range(0..p.num_blocks());
        let one = blocked(&p, &Selection::from_blocks(p.num_blocks(), &[k]).unwrap(), mb, nb, Some(workers()));
        let c = full.columns.iter().find(|c| c.block == k).unwrap();
        matches += (one.columns.len() == 1 && one.columns[0].eigenvalue == c.eigenvalue && bitwise_equal(&one.vectors, &columns(&full.vectors, c.col, c.width))) as u64;
    }
    let detail = format!("{matches}/{cases} singleton solves bitwise equal to the full solve");
    report(7, matches == cases, &detail, start, Duration::from_secs(60))
}

fn criterion_8_spectrum_audit() -> bool {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut agree = 0u64;
    let (mut zeros, mut infinite) = (0, 0);
    let seeds = 5u64;
    for seed in 0..seeds {
        let gp = generate(&GeneratorConfig::new(1000, seed)).unwrap();
        let out = dir.path().join(seed.to_string());
        write_pencil(&out, &gp.pencil, Some(&gp)).unwrap();
        let (p, meta) = read_pencil(&out).unwrap();
        let planted = meta.and_then(|m| m.planted).unwrap();
        let eigs = extract_eigenvalues(&p).unwrap();
        let z = eigs.iter().filter(|e| e.is_zero()).count();
        let inf = eigs.iter().filter(|e| e.is_infinite()).count();
        let pairs = eigs.iter().filter(|e| e.is_complex()).count();
        agree += (planted == gp.planted && planted.zeros == z && planted.infinite == inf && planted.complex_pairs == pairs) as u64;
        zeros += z;
        infinite += inf;
    }
    let detail = format!(
        "{agree}/{seeds} pencils of order 1000 match the planted counts ({zeros} zeros and {infinite} infinities in total, {} expected each)",
        seeds * 10
    );
    report(8, agree == seeds, &detail, start, Duration::from_secs(10))
}

fn main() {
    let criteria: [(&str, fn() -> bool); 8] = [
        ("criterion_1_residuals", criterion_1_residuals),
        ("criterion_2_oracle_equivalence", criterion_2_oracle_equivalence),
        ("criterion_3_overflow_robustness", criterion_3_overflow_robustness),
        ("criterion_4_determinism", criterion_4_determinism),
        ("criterion_5_desk_scale_speedup", criterion_5_desk_scale_speedup),
        ("criterion_6_protect_functions", criterion_6_protect_functions),
        ("criterion_7_selection_independence", criterion_7_selection_independence),
        ("criterion_8_spectrum_audit", criterion_8_spectrum_audit),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = Vec::new();
    for (name, run) in criteria {
        if filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str())) {
            if !run() {
                failed.push(name);
            }
        }
    }
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
