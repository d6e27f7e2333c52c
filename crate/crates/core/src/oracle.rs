//! Reference solvers and residual verification.
//!
//! `solve_scalar_robust` computes one eigenvector at a time by unblocked
//! backward substitution with the same protected kernels as the blocked
//! solver. `solve_naive` is the same substitution with every protection
//! removed. `verify` measures relative residuals with the products `S v`,
//! `T v` accumulated in double-double arithmetic.

use serde::{Deserialize, Serialize};

use crate::blocked::{normalize_column, prepare, ColumnInfo, EigenvectorResult, SegmentRef};
use crate::error::{Error, Result};
use crate::guard::{floor_log2, scale_pow2};
use crate::kernels::{compute_tip, DiagTile};
use crate::matrix::Matrix;
use crate::partition::make_partition;
use crate::pencil::{extract_eigenvalues, EigenvaluePair, RealSchurPencil, Selection};

/// Robust column-by-column solve (whole-column substitution, one scaling per eigenvector).
pub fn solve_scalar_robust(pencil: &RealSchurPencil, sel: &Selection) -> Result<EigenvectorResult> {
    let m = pencil.m();
    let part = make_partition(pencil, sel, Some(m.max(2)), Some(usize::MAX))?;
    let prep = prepare(pencil, &part)?;
    let tile = DiagTile {
        s: prep.pencil.s().as_ref(),
        t: prep.pencil.t().as_ref(),
        micro: part.tile_blocks(0),
        col_norms: &prep.norms.micro_cols[0],
    };
    let mut vectors = Matrix::zeros(m, part.num_columns());
    let mut columns = Vec::with_capacity(part.slots().len());
    for slot in part.slots() {
        let mut info = ColumnInfo {
            block: slot.block,
            col: slot.col,
            width: slot.width,
            eigenvalue: prep.eigs[slot.block],
            exponent: 0,
            perturbed: false,
            underflow: false,
            indefinite: slot.indefinite,
            error: None,
        };
        if let Some(spec) = prep.work[slot.block] {
            let solved = compute_tip(&tile, &spec, slot.position).and_then(|(seg, flags)| {
                info.perturbed = flags.perturbed;
                info.underflow = flags.underflow;
                let r = SegmentRef { values: seg.values().as_slice(), rows: m, scale: seg.scale(0) };
                normalize_column(&[r], slot.width, m)
            });
            match solved {
                Ok(c) => {
                    info.exponent = c.exponent.exponent();
                    info.underflow |= c.underflow;
                    vectors.as_mut_slice()[slot.col * m..(slot.col + slot.width) * m].copy_from_slice(&c.values);
                }
                Err(Error::ZeroColumn { .. }) => info.error = Some(Error::ZeroColumn { column: slot.col }.to_string()),
                Err(e) => info.error = Some(e.to_string()),
            }
        }
        columns.push(info);
    }
    Ok(EigenvectorResult { vectors, columns, prescale: prep.prescale })
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Cx(f64, f64);

impl Cx {
    fn mul(self, o: Cx) -> Cx {
        Cx(self.0 * o.0 - self.1 * o.1, self.0 * o.1 + self.1 * o.0)
    }

    fn sub(self, o: Cx) -> Cx {
        Cx(self.0 - o.0, self.1 - o.1)
    }

    fn div(self, o: Cx) -> Cx {
        let d = o.0 * o.0 + o.1 * o.1;
        Cx((self.0 * o.0 + self.1 * o.1) / d, (self.1 * o.0 - self.0 * o.1) / d)
    }
}

/// Unprotected substitution with the raw eigenvalue pairs. It overflows to
/// `inf`/`NaN` whenever the eigenvector's growth exceeds the floating-point
/// range; columns are laid out as in [`EigenvectorResult`] and divided by
/// their largest entry (modulus) at the end.
pub fn solve_naive(pencil: &RealSchurPencil, sel: &Selection) -> Result<Matrix> {
    let eigs = extract_eigenvalues(pencil)?;
    if sel.len() != eigs.len() {
        return Err(Error::DimensionMismatch { expected: format!("selection over {} blocks", eigs.len()), got: sel.len().to_string() });
    }
    let m = pencil.m();
    let (s, t) = (pencil.s(), pencil.t());
    let blocks = pencil.blocks();
    let ncols: usize = sel.selected().map(|k| blocks[k].size).sum();
    let mut out = Matrix::zeros(m, ncols);
    let mut col = 0;
    for k in sel.selected() {
        let p = eigs[k];
        let (alpha, beta) = (Cx(p.a, if p.block_size == 2 { p.b } else { 0.0 }), p.beta);
        let bk = blocks[k];
        let mut v = vec![Cx(0.0, 0.0); m];
        let pencil_entry = |i: usize, j: usize| Cx(beta * s[(i, j)], 0.0).sub(alpha.mul(Cx(t[(i, j)], 0.0)));
        if bk.size == 1 {
            v[bk.start] = Cx(1.0, 0.0);
        } else {
            let (i, j) = (bk.start, bk.start + 1);
            let (m00, m01) = (pencil_entry(i, i), pencil_entry(i, j));
            v[i] = m01;
            v[j] = Cx(-m00.0, -m00.1);
        }
        let mut rhs = vec![Cx(0.0, 0.0); m];
        for q in std::iter::once(k).chain((0..k).rev()) {
            let b = blocks[q];
            if q < k {
                if b.size == 1 {
                    v[b.start] = rhs[b.start].div(pencil_entry(b.start, b.start));
                } else {
                    let (i, j) = (b.start, b.start + 1);
                    let (a11, a12, a21, a22) = (pencil_entry(i, i), pencil_entry(i, j), pencil_entry(j, i), pencil_entry(j, j));
                    let det = a11.mul(a22).sub(a12.mul(a21));
                    v[i] = rhs[i].mul(a22).sub(a12.mul(rhs[j])).div(det);
                    v[j] = a11.mul(rhs[j]).sub(a21.mul(rhs[i])).div(det);
                }
            }
            // rows above -= S(zD) then += T(z alpha)
            for c in b.start..b.end() {
                let zd = Cx(v[c].0 * beta, v[c].1 * beta);
                let zb = v[c].mul(alpha);
                for i in 0..b.start {
                    rhs[i] = Cx(rhs[i].0 - s[(i, c)] * zd.0, rhs[i].1 - s[(i, c)] * zd.1);
                }
                for i in 0..b.start {
                    rhs[i] = Cx(rhs[i].0 + t[(i, c)] * zb.0, rhs[i].1 + t[(i, c)] * zb.1);
                }
            }
        }
        let nrm = v.iter().fold(0.0f64, |a, z| if bk.size == 1 { a.max(z.0.abs()) } else { a.max(z.0.hypot(z.1)) });
        for (i, z) in v.iter().enumerate() {
            out[(i, col)] = z.0 / nrm;
            if bk.size == 2 {
                out[(i, col + 1)] = z.1 / nrm;
            }
        }
        col += bk.size;
    }
    Ok(out)
}

/// Error-free transformations and double-double column accumulation.
mod dd {
    #[inline(always)]
    fn two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        let bb = s - a;
        (s, (a - (s - bb)) + (b - bb))
    }

    #[inline(always)]
    fn split(a: f64) -> (f64, f64) {
        let c = 134217729.0 * a;
        let hi = c - (c - a);
        (hi, a - hi)
    }

    /// `(hi, lo) += a * x` elementwise, products formed exactly with Dekker's splitting.
    #[inline(always)]
    fn axpy_dekker(hi: &mut [f64], lo: &mut [f64], a: &[f64], x: f64) {
        for ((h, l), &av) in hi.iter_mut().zip(lo.iter_mut()).zip(a) {
            let p = av * x;
            let e = exact_err(av, x, p);
            let (s, err) = two_sum(*h, p);
            *h = s;
            *l += err + e;
        }
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2,fma")]
    unsafe fn axpy_fma(hi: &mut [f64], lo: &mut [f64], a: &[f64], x: f64) {
        for ((h, l), &av) in hi.iter_mut().zip(lo.iter_mut()).zip(a) {
            let p = av * x;
            let e = av.mul_add(x, -p);
            let (s, err) = two_sum(*h, p);
            *h = s;
            *l += err + e;
        }
    }

    /// Both variants compute the exact product error, so results agree bitwise
    /// unless a rebalanced operand leaves the normal range.
    pub fn axpy(hi: &mut [f64], lo: &mut [f64], a: &[f64], x: f64) {
        #[cfg(target_arch = "x86_64")]
        {
            if std::arch::is_x86_feature_detected!("fma") && std::arch::is_x86_feature_detected!("avx2") {
                // SAFETY: the required CPU features were detected at runtime.
                unsafe { axpy_fma(hi, lo, a, x) };
                return;
            }
        }
        axpy_dekker(hi, lo, a, x)
    }

    pub fn axpy_portable(hi: &mut [f64], lo: &mut [f64], a: &[f64], x: f64) {
        axpy_dekker(hi, lo, a, x)
    }

    /// `sum c * (hi + lo)` over the terms, accumulated in double-double and rounded once.
    pub fn combine(terms: &[(f64, f64, f64)]) -> f64 {
        let (mut s, mut comp) = (0.0, 0.0);
        for &(c, h, l) in terms {
            let p = c * h;
            let (t, err) = two_sum(s, p);
            s = t;
            comp += err + exact_err(c, h, p) + c * l;
        }
        s + comp
    }

    /// `a * b - p` for `p = fl(a * b)`; operands beyond 2^995 are rebalanced so
    /// that the splitting constant cannot overflow.
    #[inline(always)]
    fn exact_err(a: f64, b: f64, p: f64) -> f64 {
        const BIG: f64 = 3.3e299;
        let (a, b) = if a.abs() > BIG { (a * 9.313225746154785e-10, b * 1073741824.0) } else if b.abs() > BIG { (a * 1073741824.0, b * 9.313225746154785e-10) } else { (a, b) };
        let (ah, al) = split(a);
        let (bh, bl) = split(b);
        ((ah * bh - p) + ah * bl + al * bh) + al * bl
    }
}

/// Per-column verification outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnCheck {
    pub block: usize,
    pub col: usize,
    pub width: usize,
    pub residual: f64,
    pub finite: bool,
    /// Indefinite eigenvalue: no eigenvector to check.
    pub skipped: bool,
    /// Infinity-norm difference to a reference solution after phase alignment.
    pub diff: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub columns: Vec<ColumnCheck>,
    pub max_residual: f64,
    pub median_residual: f64,
    pub non_finite_entries: usize,
    pub perturbed_columns: usize,
    pub underflow_columns: usize,
}

impl VerificationReport {
    /// Columns whose residual exceeds `threshold` or that contain non-finite values.
    pub fn offending(&self, threshold: f64) -> Vec<&ColumnCheck> {
        self.columns.iter().filter(|c| !c.skipped && (!c.finite || !(c.residual <= threshold))).collect()
    }

    pub fn passes(&self, threshold: f64) -> bool {
        self.non_finite_entries == 0 && self.offending(threshold).is_empty()
    }

    pub fn max_diff(&self) -> Option<f64> {
        self.columns.iter().filter_map(|c| c.diff).fold(None, |a, d| Some(a.map_or(d, |a: f64| a.max(d))))
    }
}

/// Column of an eigenvector matrix together with its eigenvalue.
#[derive(Clone, Copy, Debug)]
pub struct ColumnSpec {
    pub col: usize,
    pub eigenvalue: EigenvaluePair,
    pub perturbed: bool,
    pub underflow: bool,
}

/// Relative residuals of the columns of a solve.
pub fn verify(pencil: &RealSchurPencil, result: &EigenvectorResult) -> Result<VerificationReport> {
    let specs: Vec<ColumnSpec> =
        result.columns.iter().map(|c| ColumnSpec { col: c.col, eigenvalue: c.eigenvalue, perturbed: c.perturbed, underflow: c.underflow }).collect();
    verify_columns(pencil, &result.vectors, &specs)
}

/// `r = ||beta S v - alpha T v|| / ((||S|| + ||T||) ||v|| max(beta, |alpha|))`
/// per eigenvector, with the complex modulus used for `[x y]` pairs (the
/// numerator is then `|beta S z - alpha T z|` for `z = x + iy`).
pub fn verify_columns(pencil: &RealSchurPencil, vectors: &Matrix, cols: &[ColumnSpec]) -> Result<VerificationReport> {
    verify_impl(pencil, vectors, cols, dd::axpy)
}

/// Same as [`verify_columns`] without the FMA fast path (for cross-checking).
pub fn verify_columns_portable(pencil: &RealSchurPencil, vectors: &Matrix, cols: &[ColumnSpec]) -> Result<VerificationReport> {
    verify_impl(pencil, vectors, cols, dd::axpy_portable)
}

type Axpy = fn(&mut [f64], &mut [f64], &[f64], f64);

fn verify_impl(pencil: &RealSchurPencil, vectors: &Matrix, cols: &[ColumnSpec], axpy: Axpy) -> Result<VerificationReport> {
    let m = pencil.m();
    if vectors.rows() != m {
        return Err(Error::DimensionMismatch { expected: format!("{m} rows"), got: vectors.rows().to_string() });
    }
    for c in cols {
        if c.col + c.eigenvalue.block_size > vectors.cols() {
            return Err(Error::DimensionMismatch { expected: format!("at least {} columns", c.col + c.eigenvalue.block_size), got: vectors.cols().to_string() });
        }
    }
    let (s, t) = (pencil.s(), pencil.t());
    let (ns, nt) = (s.inf_norm(), t.inf_norm());
    let big = ns.max(nt);
    let k_mat = if big > 0.0 { floor_log2(big) + 1 } else { 0 };
    let non_finite_entries = vectors.as_slice().iter().filter(|v| !v.is_finite()).count();

    let mut checks = Vec::with_capacity(cols.len());
    let mut work = vec![0.0; 8 * m];
    for c in cols {
        let p = c.eigenvalue;
        let w = p.block_size;
        let data = &vectors.as_slice()[c.col * m..(c.col + w) * m];
        let finite = data.iter().all(|v| v.is_finite());
        let mut check = ColumnCheck { block: p.block_index, col: c.col, width: w, residual: f64::INFINITY, finite, skipped: false, diff: None };
        if p.is_indefinite() {
            check.skipped = true;
            check.residual = 0.0;
            checks.push(check);
            continue;
        }
        if !finite {
            checks.push(check);
            continue;
        }
        let vnorm_raw = if w == 1 { data.iter().fold(0.0f64, |a, v| a.max(v.abs())) } else { (0..m).fold(0.0f64, |a, i| a.max(data[i].hypot(data[m + i]))) };
        if vnorm_raw == 0.0 {
            checks.push(check);
            continue;
        }
        // Exact power-of-two pre-scalings of v and of (alpha, beta).
        let kv = -(floor_log2(vnorm_raw) + 1) - k_mat;
        let pair_big = p.alpha_abs().max(p.beta);
        let kp = -(floor_log2(pair_big) + 1);
        let (a, b, beta) = (scale_pow2(p.a, kp), scale_pow2(if w == 2 { p.b } else { 0.0 }, kp), scale_pow2(p.beta, kp));
        let (sv, rest) = work.split_at_mut(2 * m * 2);
        let (tv, _) = rest.split_at_mut(2 * m * 2);
        sv.fill(0.0);
        tv.fill(0.0);
        // Layout: [hi_x, lo_x, hi_y, lo_y] for each of S v and T v.
        for l in 0..m {
            for comp in 0..w {
                let x = scale_pow2(data[comp * m + l], kv);
                if x == 0.0 {
                    continue;
                }
                let rows_s = (l + 2).min(m);
                let (h, lo) = sv[comp * 2 * m..(comp + 1) * 2 * m].split_at_mut(m);
                axpy(&mut h[..rows_s], &mut lo[..rows_s], &s.col(l)[..rows_s], x);
                let (h, lo) = tv[comp * 2 * m..(comp + 1) * 2 * m].split_at_mut(m);
                axpy(&mut h[..l + 1], &mut lo[..l + 1], &t.col(l)[..l + 1], x);
            }
        }
        let mut num = 0.0f64;
        let mut vnorm = 0.0f64;
        for i in 0..m {
            let (sxh, sxl, txh, txl) = (sv[i], sv[m + i], tv[i], tv[m + i]);
            let x = scale_pow2(data[i], kv);
            if w == 1 {
                let r = dd::combine(&[(beta, sxh, sxl), (-a, txh, txl)]);
                num = num.max(r.abs());
                vnorm = vnorm.max(x.abs());
            } else {
                let (syh, syl, tyh, tyl) = (sv[2 * m + i], sv[3 * m + i], tv[2 * m + i], tv[3 * m + i]);
                // Re: beta Sx - a Tx + b Ty ; Im: beta Sy - b Tx - a Ty
                let re = dd::combine(&[(beta, sxh, sxl), (-a, txh, txl), (b, tyh, tyl)]);
                let im = dd::combine(&[(beta, syh, syl), (-b, txh, txl), (-a, tyh, tyl)]);
                num = num.max(re.hypot(im));
                vnorm = vnorm.max(x.hypot(scale_pow2(data[m + i], kv)));
            }
        }
        // v was scaled by 2^kv, the pair by 2^kp: all factors of the ratio are O(1).
        let den = (scale_pow2(ns, -k_mat) + scale_pow2(nt, -k_mat)) * scale_pow2(vnorm, k_mat) * scale_pow2(p.alpha_abs(), kp).max(beta);
        check.residual = num / den;
        checks.push(check);
    }

    let mut rs: Vec<f64> = checks.iter().filter(|c| !c.skipped).map(|c| c.residual).collect();
    rs.sort_by(|a, b| a.total_cmp(b));
    let max_residual = rs.last().copied().unwrap_or(0.0);
    let median_residual = if rs.is_empty() { 0.0 } else { rs[rs.len() / 2] };
    Ok(VerificationReport {
        columns: checks,
        max_residual,
        median_residual,
        non_finite_entries,
        perturbed_columns: cols.iter().filter(|c| c.perturbed).count(),
        underflow_columns: cols.iter().filter(|c| c.underflow).count(),
    })
}

/// Infinity-norm distance between two normalized eigenvectors after aligning
/// the phase (sign for real vectors) at the largest entry of `v`.
pub fn aligned_difference(v: &Matrix, w: &Matrix, col: usize, width: usize) -> f64 {
    let m = v.rows();
    let get = |a: &Matrix, i: usize| if width == 1 { (a[(i, col)], 0.0) } else { (a[(i, col)], a[(i, col + 1)]) };
    let p = (0..m).max_by(|&i, &j| {
        let (a, b) = (get(v, i), get(v, j));
        a.0.hypot(a.1).total_cmp(&b.0.hypot(b.1))
    });
    let Some(p) = p else { return 0.0 };
    let (vp, wp) = (get(v, p), get(w, p));
    let nv = vp.0.hypot(vp.1);
    let nw = wp.0.hypot(wp.1);
    if nv == 0.0 || nw == 0.0 {
        return (0..m).fold(0.0f64, |a, i| {
            let (x, y) = (get(v, i), get(w, i));
            a.max((x.0 - y.0).hypot(x.1 - y.1))
        });
    }
    // phase = w_p / v_p normalized to unit modulus
    let ph = Cx(wp.0, wp.1).div(Cx(vp.0, vp.1));
    let r = ph.0.hypot(ph.1);
    let ph = Cx(ph.0 / r, ph.1 / r);
    let ph = if width == 1 { Cx(ph.0.signum(), 0.0) } else { ph };
    (0..m).fold(0.0f64, |a, i| {
        let x = Cx(get(v, i).0, get(v, i).1).mul(ph);
        let y = get(w, i);
        a.max((x.0 - y.0).hypot(x.1 - y.1))
    })
}

/// Fills `diff` in `report` with the aligned distance between `result` and `reference`.
pub fn compare(report: &mut VerificationReport, result: &Matrix, reference: &Matrix) {
    for c in report.columns.iter_mut() {
        if !c.skipped {
            c.diff = Some(aligned_difference(result, reference, c.col, c.width));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_solver_on_diagonal_pencil() {
        let p = RealSchurPencil::validate(Matrix::diag(&[1.0, 2.0]), Matrix::identity(2)).unwrap();
        let r = solve_scalar_robust(&p, &Selection::all(2)).unwrap();
        assert_eq!(r.vectors, Matrix::identity(2));
        let rep = verify(&p, &r).unwrap();
        assert_eq!(rep.max_residual, 0.0);
    }

    #[test]
    fn naive_matches_robust_on_diagonal() {
        let p = RealSchurPencil::validate(Matrix::diag(&[1.0, 2.0, 5.0]), Matrix::diag(&[1.0, 1.0, 2.0])).unwrap();
        let sel = Selection::all(3);
        let n = solve_naive(&p, &sel).unwrap();
        let r = solve_scalar_robust(&p, &sel).unwrap();
        assert_eq!(n, r.vectors);
    }

    #[test]
    fn naive_zero_eigenvalue_column_is_finite() {
        let s = Matrix::from_rows(&[[1.0, 2.0], [0.0, 0.0]]);
        let p = RealSchurPencil::validate(s, Matrix::identity(2)).unwrap();
        let n = solve_naive(&p, &Selection::all(2)).unwrap();
        assert!(n.is_finite());
    }

    #[test]
    fn corrupted_column_has_large_residual() {
        let s = Matrix::from_rows(&[[1.0, 1.0], [0.0, 2.0]]);
        let p = RealSchurPencil::validate(s, Matrix::identity(2)).unwrap();
        let mut r = solve_scalar_robust(&p, &Selection::all(2)).unwrap();
        assert!(verify(&p, &r).unwrap().max_residual <= 2.0 * crate::guard::UNIT_ROUNDOFF);
        r.vectors[(0, 1)] = -r.vectors[(0, 1)];
        let rep = verify(&p, &r).unwrap();
        assert!(rep.columns[1].residual >= 1e3 * crate::guard::UNIT_ROUNDOFF);
        assert_eq!(rep.offending(2.0 * crate::guard::UNIT_ROUNDOFF).len(), 1);
    }

    #[test]
    fn complex_residual_of_rotation() {
        let p = RealSchurPencil::validate(Matrix::from_rows(&[[0.0, 1.0], [-1.0, 0.0]]), Matrix::identity(2)).unwrap();
        let r = solve_scalar_robust(&p, &Selection::all(1)).unwrap();
        assert_eq!(r.vectors, Matrix::identity(2));
        assert_eq!(verify(&p, &r).unwrap().max_residual, 0.0);
    }

    #[test]
    fn alignment_handles_sign_and_phase() {
        let v = Matrix::from_rows(&[[1.0], [-0.5]]);
        let w = Matrix::from_rows(&[[-1.0], [0.5]]);
        assert_eq!(aligned_difference(&v, &w, 0, 1), 0.0);
        // z = (1, i) vs i z = (i, -1)
        let v = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        let w = Matrix::from_rows(&[[0.0, 1.0], [-1.0, 0.0]]);
        assert!(aligned_difference(&v, &w, 0, 2) < 1e-15);
    }
}
