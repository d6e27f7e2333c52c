mod common;

use common::{bitwise_equal, check_division, check_update, default_pencil};
use geneig::blocked::solve_sequential;
use geneig::guard::{protect_division, protect_update, AugmentedMatrix, ScalingExponent, OMEGA, UNIT_ROUNDOFF};
use geneig::io::{format_matrix_market, parse_matrix_market};
use geneig::kernels::{robust_tile_update, solve_micro, MicroSystem};
use geneig::matrix::Matrix;
use geneig::oracle::{verify_columns, ColumnSpec};
use geneig::partition::make_partition;
use geneig::pencil::{EigenvaluePair, RealSchurPencil, Selection, SpectralBlock};
use geneig::scheduler::solve_parallel;
use proptest::prelude::*;

/// Non-negative finite doubles spread uniformly over binary exponents, with zeros,
/// subnormals and the threshold itself.
fn magnitude() -> impl Strategy<Value = f64> {
    prop_oneof![
        8 => (0u64..2047, 0u64..(1 << 52)).prop_map(|(e, f)| f64::from_bits((e << 52) | f)),
        1 => Just(0.0),
        1 => Just(OMEGA),
        1 => (0u64..(1 << 52)).prop_map(f64::from_bits),
        1 => (-4i32..=4).prop_map(|k| libm::scalbn(1.0, k)),
    ]
}

fn moderate() -> impl Strategy<Value = f64> {
    prop_oneof![(-4.0f64..4.0), (-1.0f64..1.0).prop_map(|v| v * 1e-3)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4000))]

    #[test]
    fn division_matches_exact_oracle(b in magnitude(), t in magnitude()) {
        match protect_division(b, t) {
            Ok(xi) => prop_assert_eq!(check_division(b, t, xi.exponent()), Ok(())),
            Err(_) => prop_assert_eq!(t, 0.0),
        }
    }

    #[test]
    fn division_near_the_boundary(t_exp in -1074i32..0, t_frac in 0u64..(1 << 52), ulps in -8i64..8) {
        let t = libm::scalbn(1.0 + t_frac as f64 / (1u64 << 52) as f64, t_exp);
        prop_assume!(t > 0.0);
        let edge = t * OMEGA;
        let b = f64::from_bits((edge.to_bits() as i64 + ulps).max(0) as u64);
        prop_assume!(b.is_finite());
        let xi = protect_division(b, t).unwrap();
        prop_assert_eq!(check_division(b, t, xi.exponent()), Ok(()));
    }

    #[test]
    fn update_matches_exact_oracle(y in magnitude(), t in magnitude(), x in magnitude()) {
        let xi = protect_update(y, t, x).unwrap();
        prop_assert_eq!(check_update(y, t, x, xi.exponent()), Ok(()));
    }

    #[test]
    fn update_near_the_boundary(t_exp in -40i32..24, x in 0.5f64..1.0, ulps in -16i64..16, frac in 0.0f64..1.0) {
        // y + t x lands within a few ulps of OMEGA.
        let t = libm::scalbn(1.0, t_exp + 1000);
        let tx = t * x;
        prop_assume!(tx.is_finite() && tx < OMEGA);
        let y0 = (OMEGA - tx) * frac;
        let y = f64::from_bits((y0.to_bits() as i64 + ulps).max(0) as u64);
        let xi = protect_update(y, t, x).unwrap();
        prop_assert_eq!(check_update(y, t, x, xi.exponent()), Ok(()));
    }

    #[test]
    fn micro_solution_postconditions(
        d in 1usize..=2, e in 1usize..=2,
        a in proptest::array::uniform4(moderate()), c in proptest::array::uniform4(moderate()),
        rhs in proptest::array::uniform4(-1e300f64..1e300), beta in 0.0f64..1.0, alpha in (-1.0f64..1.0, 0.1f64..1.0),
    ) {
        let spec = SpectralBlock { size: e, beta, a: alpha.0, b: if e == 2 { alpha.1 } else { 0.0 } };
        let mut c = [[c[0], c[1]], [c[2], c[3]]];
        if d == 2 { c[1][0] = 0.0; }
        let sys = MicroSystem { a: [[a[0], a[1]], [a[2], a[3]]], c, d, spec, rhs: [[rhs[0], rhs[1]], [rhs[2], rhs[3]]] };
        let sol = solve_micro(&sys).unwrap();
        prop_assert!(sol.xi.exponent() <= 0);
        for r in 0..d {
            let row: f64 = (0..e).map(|k| sol.z[r][k].abs()).sum();
            prop_assert!(row.is_finite() && row <= OMEGA);
        }
    }

    #[test]
    fn micro_solution_solves_the_system(
        a in proptest::array::uniform4(moderate()), c in proptest::array::uniform4(moderate()),
        rhs in proptest::array::uniform4(-1.0f64..1.0), beta in 0.1f64..1.0, alpha in (-1.0f64..1.0, 0.1f64..1.0),
    ) {
        let spec = SpectralBlock { size: 2, beta, a: alpha.0, b: alpha.1 };
        let c = [[c[0], c[1]], [0.0, c[3]]];
        let a = [[a[0], a[1]], [a[2], a[3]]];
        let rhs = [[rhs[0], rhs[1]], [rhs[2], rhs[3]]];
        let sol = solve_micro(&MicroSystem { a, c, d: 2, spec, rhs }).unwrap();
        prop_assume!(!sol.perturbed);
        let (bm, xi) = (spec.b_mat(), sol.xi.factor());
        // beta A Z - C Z B = xi rhs, normwise against the size of the terms.
        let mut worst = 0.0f64;
        let mut size = 0.0f64;
        for r in 0..2 {
            for k in 0..2 {
                let mut lhs = 0.0;
                let mut row = xi * rhs[r][k].abs();
                for q in 0..2 {
                    let az = beta * a[r][q] * sol.z[q][k];
                    let czb: f64 = (0..2).map(|p| c[r][q] * sol.z[q][p] * bm[p][k]).sum();
                    lhs += az - czb;
                    row += az.abs() + (0..2).map(|p| (c[r][q] * sol.z[q][p] * bm[p][k]).abs()).sum::<f64>();
                }
                worst = worst.max((lhs - xi * rhs[r][k]).abs());
                size = size.max(row);
            }
        }
        prop_assert!(worst <= 64.0 * UNIT_ROUNDOFF * size, "residual {worst:e} vs size {size:e}");
    }

    #[test]
    fn micro_solution_is_power_of_two_equivariant(
        a in proptest::array::uniform4(moderate()), c in proptest::array::uniform4(moderate()),
        rhs in proptest::array::uniform4(-1.0f64..1.0), k in -200i32..200,
    ) {
        let spec = SpectralBlock { size: 1, beta: 0.75, a: 0.3, b: 0.0 };
        let sys = MicroSystem { a: [[a[0], a[1]], [0.0, a[3]]], c: [[c[0], c[1]], [0.0, c[3]]], d: 2, spec, rhs: [[rhs[0], 0.0], [rhs[2], 0.0]] };
        let base = solve_micro(&sys).unwrap();
        let mut scaled = sys;
        for row in scaled.rhs.iter_mut() {
            row[0] = libm::scalbn(row[0], k);
        }
        let s = solve_micro(&scaled).unwrap();
        prop_assume!(base.xi.is_one() && s.xi.is_one());
        for r in 0..2 {
            prop_assert_eq!(s.z[r][0].to_bits(), libm::scalbn(base.z[r][0], k).to_bits());
        }
    }

    #[test]
    fn tile_update_preserves_true_values(
        rows in 1usize..6, cols in 1usize..6, seed in any::<u64>(), ex in -30i32..=0, ey in -30i32..=0,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |r: usize, c: usize| Matrix::from_col_major(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let s = fill(rows, cols);
        let t = fill(rows, cols);
        let specs = [SpectralBlock { size: 1, beta: 0.5, a: -0.25, b: 0.0 }, SpectralBlock { size: 2, beta: 0.625, a: 0.125, b: 0.5 }];
        let widths = [1, 2];
        let mut x = AugmentedMatrix::from_values(fill(cols, 3), &widths);
        let mut y = AugmentedMatrix::from_values(fill(rows, 3), &widths);
        for j in 0..2 {
            x.set_scale(j, ScalingExponent::new(ex));
            y.set_scale(j, ScalingExponent::new(ey));
        }
        let before: Vec<f64> = (0..3).flat_map(|c| (0..rows).map(move |i| (i, c))).map(|(i, c)| y.true_value(i, c)).collect();
        let xt: Vec<f64> = (0..3).flat_map(|c| (0..cols).map(move |i| (i, c))).map(|(i, c)| x.true_value(i, c)).collect();
        let mut y2 = y.clone();
        robust_tile_update(s.as_ref(), s.inf_norm(), t.as_ref(), t.inf_norm(), &x, &specs, &mut y2).unwrap();
        // Reference in plain arithmetic: Y - (S X D - T X B).
        let xcol = |c: usize| &xt[c * cols..(c + 1) * cols];
        let sx = |m: &Matrix, c: usize, i: usize| (0..cols).map(|k| m[(i, k)] * xcol(c)[k]).sum::<f64>();
        for i in 0..rows {
            let want0 = before[i] - (sx(&s, 0, i) * 0.5 - sx(&t, 0, i) * -0.25);
            let (d, bm) = (specs[1].d(), specs[1].b_mat());
            let want1 = before[rows + i] - (sx(&s, 1, i) * d[0][0] - (sx(&t, 1, i) * bm[0][0] + sx(&t, 2, i) * bm[1][0]));
            let want2 = before[2 * rows + i] - (sx(&s, 2, i) * d[1][1] - (sx(&t, 1, i) * bm[0][1] + sx(&t, 2, i) * bm[1][1]));
            let scale = libm::scalbn(1.0, -ex.min(ey)) * 64.0;
            for (c, want) in [want0, want1, want2].into_iter().enumerate() {
                let got = y2.true_value(i, c);
                prop_assert!((got - want).abs() <= 1e-13 * scale, "({i},{c}): {got} vs {want}");
            }
        }
    }

    #[test]
    fn tile_update_commutes_with_common_rescaling(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>(), shift in -40i32..=0) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |r: usize, c: usize, big: f64| Matrix::from_col_major(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0) * big).collect());
        let s = fill(rows, cols, OMEGA / 8.0);
        let t = fill(rows, cols, 1.0);
        let specs = [SpectralBlock { size: 2, beta: 0.5, a: 0.25, b: 0.5 }];
        let x = AugmentedMatrix::from_values(fill(cols, 2, 1e300), &[2]);
        let y = AugmentedMatrix::from_values(fill(rows, 2, 1e300), &[2]);
        let mut a = y.clone();
        robust_tile_update(s.as_ref(), s.inf_norm(), t.as_ref(), t.inf_norm(), &x, &specs, &mut a).unwrap();
        let (mut xs, mut b) = (x.clone(), y.clone());
        xs.set_scale(0, ScalingExponent::new(shift));
        b.set_scale(0, ScalingExponent::new(shift));
        robust_tile_update(s.as_ref(), s.inf_norm(), t.as_ref(), t.inf_norm(), &xs, &specs, &mut b).unwrap();
        prop_assert!(bitwise_equal(a.values(), b.values()));
        prop_assert_eq!(b.scale(0).exponent(), a.scale(0).exponent() + shift);
        prop_assert!(a.norm(0) <= OMEGA && a.values().is_finite());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matrix_market_round_trip(rows in 1usize..6, cols in 1usize..6, bits in proptest::collection::vec(any::<u64>(), 36)) {
        let a = Matrix::from_col_major(rows, cols, bits.iter().take(rows * cols).map(|&b| f64::from_bits(b)).collect());
        let b = parse_matrix_market(&format_matrix_market(&a)).unwrap();
        // NaN payloads are not representable in text; any NaN reads back as NaN.
        let same = |x: &f64, y: &f64| x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan());
        prop_assert_eq!((a.rows(), a.cols()), (b.rows(), b.cols()));
        prop_assert!(a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| same(x, y)));
    }

    #[test]
    fn residual_is_invariant_under_pencil_scaling(m in 2usize..30, seed in any::<u64>(), k in -400i32..400) {
        let p = default_pencil(m, seed);
        let part = make_partition(&p, &Selection::all(p.num_blocks()), None, None).unwrap();
        let r = solve_sequential(&p, &part).unwrap();
        // Exact invariance needs every scaled product to stay clear of gradual underflow.
        let min_nz = |xs: &[f64]| xs.iter().map(|v| v.abs()).filter(|v| *v > 0.0).fold(1.0f64, f64::min);
        let tiny = min_nz(r.vectors.as_slice()) * min_nz(p.s().as_slice()).min(min_nz(p.t().as_slice()));
        prop_assume!(libm::scalbn(tiny, -k.abs() - 80) >= f64::MIN_POSITIVE);
        let specs = |scale: i32| -> Vec<ColumnSpec> {
            r.columns.iter().map(|c| {
                let e = c.eigenvalue;
                let eigenvalue = EigenvaluePair { a: libm::scalbn(e.a, scale), b: libm::scalbn(e.b, scale), beta: libm::scalbn(e.beta, scale), ..e };
                ColumnSpec { col: c.col, eigenvalue, perturbed: false, underflow: false }
            }).collect()
        };
        let (s, t, blocks) = p.clone().into_parts();
        let scale_m = |a: &Matrix| Matrix::from_col_major(a.rows(), a.cols(), a.as_slice().iter().map(|v| libm::scalbn(*v, k)).collect());
        let q = RealSchurPencil::with_blocks(scale_m(&s), scale_m(&t), blocks).unwrap();
        let base = verify_columns(&p, &r.vectors, &specs(0)).unwrap();
        let scaled = verify_columns(&q, &r.vectors, &specs(k)).unwrap();
        for (a, b) in base.columns.iter().zip(&scaled.columns) {
            prop_assert_eq!(a.residual.to_bits(), b.residual.to_bits());
        }
    }

    #[test]
    fn parallel_equals_sequential_on_random_partitions(m in 1usize..90, seed in any::<u64>(), mb in 2usize..20, nb in 2usize..12, workers in 1usize..5) {
        let p = default_pencil(m, seed);
        let part = make_partition(&p, &Selection::all(p.num_blocks()), Some(mb), Some(nb)).unwrap();
        let a = solve_sequential(&p, &part).unwrap();
        let (b, _) = solve_parallel(&p, &part, workers).unwrap();
        prop_assert!(bitwise_equal(&a.vectors, &b.vectors));
        prop_assert_eq!(a.columns, b.columns);
    }
}
