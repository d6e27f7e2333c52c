//! Robust tile kernels: small matrix-equation solves, eigenvector tips and
//! overflow-protected linear updates `Y <- Y - (S X D - T X B)`.

use crate::error::{Error, Result};
use crate::guard::{
    floor_log2, protect_division, protect_update, scale_pow2, scale_slice, AugmentedMatrix, ScalingExponent, OMEGA,
    SMLNUM, UNIT_ROUNDOFF,
};
use crate::matrix::{MatRef, Matrix};
use crate::partition::TilePartition;
use crate::pencil::{DiagBlock, RealSchurPencil, SpectralBlock};

/// Flags raised while computing an eigenvector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct KernelFlags {
    /// A near-singular pivot was replaced by `smin`.
    pub perturbed: bool,
    /// A nonzero stored value dropped below the normal range during scaling.
    pub underflow: bool,
}

impl std::ops::BitOrAssign for KernelFlags {
    fn bitor_assign(&mut self, rhs: Self) {
        self.perturbed |= rhs.perturbed;
        self.underflow |= rhs.underflow;
    }
}

/// The `d × e` equation `A Z D - C Z B = rhs` with `d, e ∈ {1, 2}`.
#[derive(Clone, Copy, Debug)]
pub struct MicroSystem {
    pub a: [[f64; 2]; 2],
    pub c: [[f64; 2]; 2],
    pub d: usize,
    pub spec: SpectralBlock,
    pub rhs: [[f64; 2]; 2],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MicroSolution {
    pub z: [[f64; 2]; 2],
    pub xi: ScalingExponent,
    pub perturbed: bool,
}

/// Solves a micro system by Gaussian elimination with complete pivoting on
/// the real `(d e) × (d e)` matrix `beta (I ⊗ A) - (B^T ⊗ C)`.
///
/// Pivots smaller than `smin = max(u * max|M|, SMLNUM)` are replaced by
/// `smin`. The returned `z` solves the (possibly perturbed) system with the
/// right-hand side scaled by `xi`, and `||z||_inf <= OMEGA`.
pub fn solve_micro(sys: &MicroSystem) -> Result<MicroSolution> {
    let d = sys.d;
    let e = sys.spec.size;
    let n = d * e;
    let bm = sys.spec.b_mat();
    let beta = sys.spec.beta;
    let mut m = [[0.0f64; 4]; 4];
    let mut rhs = [0.0f64; 4];
    for c1 in 0..e {
        for r1 in 0..d {
            let row = c1 * d + r1;
            rhs[row] = sys.rhs[r1][c1];
            for c2 in 0..e {
                for r2 in 0..d {
                    let col = c2 * d + r2;
                    let diag = if c1 == c2 { beta * sys.a[r1][r2] } else { 0.0 };
                    m[row][col] = diag - bm[c2][c1] * sys.c[r1][r2];
                }
            }
        }
    }
    if m.iter().take(n).any(|r| r.iter().take(n).any(|v| !v.is_finite())) || rhs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { row: 0, col: 0 });
    }

    // Bring the matrix into (1/2, 1] when it is large; the solution is scaled back by sigma <= 1.
    let mmax = m.iter().take(n).flat_map(|r| r.iter().take(n)).fold(0.0f64, |a, v| a.max(v.abs()));
    let sigma_exp = if mmax > 1.0 { -(floor_log2(mmax) + 1) } else { 0 };
    if sigma_exp != 0 {
        for r in m.iter_mut().take(n) {
            for v in r.iter_mut().take(n) {
                *v = scale_pow2(*v, sigma_exp);
            }
        }
    }
    let smin = (UNIT_ROUNDOFF * scale_pow2(mmax, sigma_exp)).max(SMLNUM);

    let mut rperm = [0usize, 1, 2, 3];
    let mut cperm = [0usize, 1, 2, 3];
    let mut perturbed = false;
    for k in 0..n {
        let (mut pi, mut pj, mut best) = (k, k, -1.0f64);
        for i in k..n {
            for j in k..n {
                if m[i][j].abs() > best {
                    best = m[i][j].abs();
                    pi = i;
                    pj = j;
                }
            }
        }
        m.swap(k, pi);
        rperm.swap(k, pi);
        for row in m.iter_mut() {
            row.swap(k, pj);
        }
        cperm.swap(k, pj);
        if m[k][k].abs() < smin {
            m[k][k] = if m[k][k] < 0.0 { -smin } else { smin };
            perturbed = true;
        }
        for i in k + 1..n {
            let l = m[i][k] / m[k][k];
            m[i][k] = l;
            for j in k + 1..n {
                m[i][j] -= l * m[k][j];
            }
        }
    }

    let mut b = [0.0f64; 4];
    for i in 0..n {
        b[i] = rhs[rperm[i]];
    }
    let mut xi = ScalingExponent::ONE;
    let scale_all = |b: &mut [f64; 4], s: ScalingExponent, xi: &mut ScalingExponent| {
        if !s.is_one() {
            scale_slice(&mut b[..n], s.exponent());
            *xi = xi.compose(s);
        }
    };
    // Forward substitution with the unit lower factor (|l| <= 1).
    for k in 0..n {
        if k + 1 < n {
            let ynorm = b[k + 1..n].iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let lnorm = (k + 1..n).fold(0.0f64, |a, i| a.max(m[i][k].abs()));
            let s = protect_update(ynorm, lnorm, b[k].abs())?;
            scale_all(&mut b, s, &mut xi);
            for i in k + 1..n {
                b[i] -= m[i][k] * b[k];
            }
        }
    }
    // Back substitution with the upper factor.
    for i in (0..n).rev() {
        let s = protect_division(b[i].abs(), m[i][i].abs())?;
        scale_all(&mut b, s, &mut xi);
        b[i] /= m[i][i];
        if i > 0 {
            let ynorm = b[..i].iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let unorm = (0..i).fold(0.0f64, |a, k| a.max(m[k][i].abs()));
            let s = protect_update(ynorm, unorm, b[i].abs())?;
            scale_all(&mut b, s, &mut xi);
            for k in 0..i {
                b[k] -= m[k][i] * b[i];
            }
        }
    }
    let mut x = [0.0f64; 4];
    for i in 0..n {
        x[cperm[i]] = b[i];
    }
    if sigma_exp != 0 {
        for v in x.iter_mut().take(n) {
            *v = scale_pow2(*v, sigma_exp);
        }
    }
    let mut z = [[0.0f64; 2]; 2];
    for c in 0..e {
        for r in 0..d {
            z[r][c] = x[c * d + r];
        }
    }
    // Row sums of a two-column solution may still exceed the threshold.
    if e == 2 && (0..d).any(|r| 0.5 * z[r][0].abs() + 0.5 * z[r][1].abs() > 0.5 * OMEGA) {
        for row in z.iter_mut() {
            row[0] *= 0.5;
            row[1] *= 0.5;
        }
        xi = xi.compose(ScalingExponent::new(-1));
    }
    Ok(MicroSolution { z, xi, perturbed })
}

/// Norms of the part of each micro-block column that lies strictly above the
/// block inside a diagonal tile: `(||S(above, q)||_inf, ||T(above, q)||_inf)`.
pub fn micro_column_norms(s: MatRef<'_>, t: MatRef<'_>, micro: &[DiagBlock]) -> Vec<(f64, f64)> {
    micro
        .iter()
        .map(|b| (s.sub(0, b.start, b.start, b.size).inf_norm(), t.sub(0, b.start, b.start, b.size).inf_norm()))
        .collect()
}

/// Diagonal tile of a pencil: `S_ii`, `T_ii`, their micro blocks (local
/// offsets) and the per-block column norms.
#[derive(Clone, Copy, Debug)]
pub struct DiagTile<'a> {
    pub s: MatRef<'a>,
    pub t: MatRef<'a>,
    pub micro: &'a [DiagBlock],
    pub col_norms: &'a [(f64, f64)],
}

enum Start {
    Solve,
    Tip { position: usize, init: [[f64; 2]; 2] },
}

/// Backward substitution over the micro blocks of a diagonal tile for one
/// eigenvector segment stored column-major in `vals` (`rows × w`).
fn substitute(tile: &DiagTile<'_>, spec: &SpectralBlock, vals: &mut [f64], scale: &mut ScalingExponent, start: Start) -> Result<KernelFlags> {
    let rows = tile.s.rows();
    let w = spec.size;
    debug_assert_eq!(vals.len(), rows * w);
    let mut flags = KernelFlags::default();
    let (top, tip) = match start {
        Start::Solve => (tile.micro.len(), None),
        Start::Tip { position, init } => (position + 1, Some((position, init))),
    };
    if top == 0 {
        return Ok(flags);
    }
    let rescale = |vals: &mut [f64], s: ScalingExponent, scale: &mut ScalingExponent, flags: &mut KernelFlags| {
        if !s.is_one() {
            flags.underflow |= scale_slice(vals, s.exponent());
            *scale = scale.compose(s);
        }
    };
    let row_sums_max = |vals: &[f64], hi: usize| -> f64 {
        let pick = |best: f64, s: f64| if s > best { s } else { best };
        if w == 1 {
            vals[..hi].iter().fold(0.0f64, |b, v| pick(b, v.abs()))
        } else {
            vals[..hi].iter().zip(&vals[rows..rows + hi]).fold(0.0f64, |b, (x, y)| pick(b, x.abs() + y.abs()))
        }
    };

    if let Some((p, init)) = tip {
        let blk = tile.micro[p];
        for c in 0..w {
            let col = &mut vals[c * rows..(c + 1) * rows];
            col[blk.start..].iter_mut().for_each(|v| *v = 0.0);
            for r in 0..blk.size {
                col[blk.start + r] = init[r][c];
            }
        }
    }
    let mut above_norm = row_sums_max(vals, tile.micro[top - 1].start);
    let bm = spec.b_mat();

    for q in (0..top).rev() {
        let blk = tile.micro[q];
        let d = blk.size;
        let is_tip = matches!(tip, Some((p, _)) if p == q);
        if !is_tip {
            let mut a = [[0.0; 2]; 2];
            let mut c = [[0.0; 2]; 2];
            let mut rhs = [[0.0; 2]; 2];
            for r in 0..d {
                for k in 0..d {
                    a[r][k] = tile.s.get(blk.start + r, blk.start + k);
                    c[r][k] = tile.t.get(blk.start + r, blk.start + k);
                }
                for col in 0..w {
                    rhs[r][col] = vals[col * rows + blk.start + r];
                }
            }
            let sol = solve_micro(&MicroSystem { a, c, d, spec: *spec, rhs })?;
            flags.perturbed |= sol.perturbed;
            rescale(vals, sol.xi, scale, &mut flags);
            above_norm = scale_pow2(above_norm, sol.xi.exponent());
            for r in 0..d {
                for col in 0..w {
                    vals[col * rows + blk.start + r] = sol.z[r][col];
                }
            }
        }
        if blk.start == 0 {
            continue;
        }
        let hi = blk.start;

        // zD and zB, protected as right multiplications.
        let znorm = (0..d).fold(0.0f64, |acc, r| acc.max((0..w).map(|c| vals[c * rows + blk.start + r].abs()).sum()));
        let g = protect_update(0.0, znorm, spec.d_norm().max(spec.b_norm()))?;
        rescale(vals, g, scale, &mut flags);
        above_norm = scale_pow2(above_norm, g.exponent());
        let mut zd = [[0.0f64; 2]; 2];
        let mut zb = [[0.0f64; 2]; 2];
        for r in 0..d {
            let z0 = vals[blk.start + r];
            if w == 1 {
                zd[r][0] = z0 * spec.beta;
                zb[r][0] = z0 * bm[0][0];
            } else {
                let z1 = vals[rows + blk.start + r];
                zd[r][0] = z0 * spec.beta;
                zd[r][1] = z1 * spec.beta;
                zb[r][0] = z0 * bm[0][0] + z1 * bm[1][0];
                zb[r][1] = z0 * bm[0][1] + z1 * bm[1][1];
            }
        }
        let small_norm = |m: &[[f64; 2]; 2]| (0..d).fold(0.0f64, |acc, r| acc.max((0..w).map(|c| m[r][c].abs()).sum()));
        let (s_col, t_col) = tile.col_norms[q];

        // rows above -= S(above, q) zD
        let delta = protect_update(above_norm, s_col, small_norm(&zd))?;
        if !delta.is_one() {
            rescale(vals, delta, scale, &mut flags);
            for r in 0..d {
                for c in 0..w {
                    zd[r][c] = scale_pow2(zd[r][c], delta.exponent());
                    zb[r][c] = scale_pow2(zb[r][c], delta.exponent());
                }
            }
        }
        for c in 0..w {
            for k in 0..d {
                let coef = zd[k][c];
                let scol = tile.s.col_range(blk.start + k, 0, hi);
                for (v, &sv) in vals[c * rows..c * rows + hi].iter_mut().zip(scol) {
                    *v -= sv * coef;
                }
            }
        }
        above_norm = row_sums_max(vals, hi);

        // rows above += T(above, q) zB
        let delta = protect_update(above_norm, t_col, small_norm(&zb))?;
        if !delta.is_one() {
            rescale(vals, delta, scale, &mut flags);
            for r in 0..d {
                for c in 0..w {
                    zb[r][c] = scale_pow2(zb[r][c], delta.exponent());
                }
            }
        }
        for c in 0..w {
            for k in 0..d {
                let coef = zb[k][c];
                let tcol = tile.t.col_range(blk.start + k, 0, hi);
                for (v, &tv) in vals[c * rows..c * rows + hi].iter_mut().zip(tcol) {
                    *v += tv * coef;
                }
            }
        }
        above_norm = row_sums_max(vals, hi);
    }
    Ok(flags)
}

/// Solves `S_ii Z D_jj - T_ii Z B_jj = Y` in place for every column block of
/// `y` (one spectral block per column block).
pub fn solve_tile(tile: &DiagTile<'_>, specs: &[SpectralBlock], y: &mut AugmentedMatrix) -> Result<Vec<KernelFlags>> {
    assert_eq!(specs.len(), y.num_blocks());
    let rows = y.rows();
    let mut flags = Vec::with_capacity(specs.len());
    for (j, spec) in specs.iter().enumerate() {
        let blk = *y.block(j);
        let mut scale = blk.scale;
        let vals = &mut y.values_mut().as_mut_slice()[blk.start * rows..(blk.start + blk.width) * rows];
        flags.push(substitute(tile, spec, vals, &mut scale, Start::Solve)?);
        y.set_scale(j, scale);
        y.refresh_norm(j);
    }
    Ok(flags)
}

/// Null vector of the 2×2 complex matrix `beta A - (a + ib) C`, split as the
/// real/imaginary columns `[x y]` and scaled by a power of two to unit order.
fn complex_tip(a: &[[f64; 2]; 2], c: &[[f64; 2]; 2], spec: &SpectralBlock) -> [[f64; 2]; 2] {
    let big = a.iter().flatten().chain(c.iter().flatten()).fold(0.0f64, |m, v| m.max(v.abs()));
    let k = if big > 0.0 { -(floor_log2(big) + 1) } else { 0 };
    let mut re = [[0.0; 2]; 2];
    let mut im = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let (av, cv) = (scale_pow2(a[i][j], k), scale_pow2(c[i][j], k));
            re[i][j] = spec.beta * av - spec.a * cv;
            im[i][j] = -spec.b * cv;
        }
    }
    let row_mag = |i: usize| re[i][0].abs().max(im[i][0].abs()).max(re[i][1].abs()).max(im[i][1].abs());
    let i = if row_mag(1) > row_mag(0) { 1 } else { 0 };
    // z = (m_i1, -m_i0) annihilates row i.
    let z = [(re[i][1], im[i][1]), (-re[i][0], -im[i][0])];
    let norm = z.iter().fold(0.0f64, |m, (x, y)| m.max(x.abs() + y.abs()));
    let s = if norm > 0.0 { -floor_log2(norm) - 1 + if norm.log2().fract() == 0.0 { 1 } else { 0 } } else { 0 };
    [[scale_pow2(z[0].0, s), scale_pow2(z[0].1, s)], [scale_pow2(z[1].0, s), scale_pow2(z[1].1, s)]]
}

/// Eigenvector segment inside the diagonal tile containing the eigenvalue:
/// zero below the eigenvalue's block, the block itself initialized to a null
/// vector of the block pencil, and rows above filled by substitution.
pub fn compute_tip(tile: &DiagTile<'_>, spec: &SpectralBlock, position: usize) -> Result<(AugmentedMatrix, KernelFlags)> {
    let blk = tile.micro[position];
    if blk.size != spec.size {
        return Err(Error::DimensionMismatch { expected: format!("block of size {}", spec.size), got: blk.size.to_string() });
    }
    if spec.beta == 0.0 && spec.a == 0.0 && spec.b == 0.0 {
        return Err(Error::Indefinite { block: position });
    }
    let init = if blk.size == 1 {
        [[1.0, 0.0], [0.0, 0.0]]
    } else {
        let mut a = [[0.0; 2]; 2];
        let mut c = [[0.0; 2]; 2];
        for r in 0..2 {
            for k in 0..2 {
                a[r][k] = tile.s.get(blk.start + r, blk.start + k);
                c[r][k] = tile.t.get(blk.start + r, blk.start + k);
            }
        }
        complex_tip(&a, &c, spec)
    };
    let rows = tile.s.rows();
    let mut values = Matrix::zeros(rows, spec.size);
    let mut scale = ScalingExponent::ONE;
    let flags = substitute(tile, spec, values.as_mut_slice(), &mut scale, Start::Tip { position, init })?;
    Ok((AugmentedMatrix::segment(values, scale), flags))
}

/// Small matrix `M_j` (size 1 or 2) applied from the right to block `j`.
pub type SmallMatrix = [[f64; 2]; 2];

fn small_norm(m: &SmallMatrix, size: usize) -> f64 {
    (0..size).fold(0.0f64, |acc, r| acc.max((0..size).map(|c| m[r][c].abs()).sum()))
}

/// Robust right multiplication `<beta, Y> = <alpha, X> M` with one small
/// matrix per column block: `gamma_j = ProtectUpdate(0, ||X_j||, ||M_j||)`,
/// `Y_j = (gamma_j X_j) M_j`, `beta_j = alpha_j gamma_j`.
pub fn robust_right_multiply(x: &AugmentedMatrix, mats: &[SmallMatrix]) -> Result<(AugmentedMatrix, Vec<KernelFlags>)> {
    assert_eq!(mats.len(), x.num_blocks());
    let rows = x.rows();
    let widths: Vec<usize> = x.blocks().iter().map(|b| b.width).collect();
    let mut out = AugmentedMatrix::zeros(rows, &widths);
    let mut flags = vec![KernelFlags::default(); mats.len()];
    for (j, m) in mats.iter().enumerate() {
        let blk = *x.block(j);
        let w = blk.width;
        let gamma = protect_update(0.0, blk.norm, small_norm(m, w))?;
        let src = &x.values().as_slice()[blk.start * rows..(blk.start + w) * rows];
        let mut scaled;
        let src = if gamma.is_one() {
            src
        } else {
            scaled = src.to_vec();
            flags[j].underflow |= scale_slice(&mut scaled, gamma.exponent());
            &scaled[..]
        };
        let dst = &mut out.values_mut().as_mut_slice()[blk.start * rows..(blk.start + w) * rows];
        if w == 1 {
            for (o, &v) in dst.iter_mut().zip(src) {
                *o = v * m[0][0];
            }
        } else {
            let (d0, d1) = dst.split_at_mut(rows);
            let (s0, s1) = src.split_at(rows);
            for r in 0..rows {
                d0[r] = s0[r] * m[0][0] + s1[r] * m[1][0];
                d1[r] = s0[r] * m[0][1] + s1[r] * m[1][1];
            }
        }
        out.set_scale(j, blk.scale.compose(gamma));
        out.refresh_norm(j);
    }
    Ok((out, flags))
}

/// Sign of the dense left update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateSign {
    /// `Z = Y - M X`
    Subtract,
    /// `Z = Y + M X`
    Add,
}

/// Robust left update `<zeta, Z> = <beta, Y> ∓ M <alpha, X>`, written into `y`.
/// `x` is consumed as scratch space.
pub fn robust_left_update(m: MatRef<'_>, m_norm: f64, mut x: AugmentedMatrix, y: &mut AugmentedMatrix, sign: UpdateSign) -> Result<Vec<KernelFlags>> {
    assert_eq!(x.num_blocks(), y.num_blocks());
    assert_eq!(m.rows(), y.rows());
    assert_eq!(m.cols(), x.rows());
    let mut flags = vec![KernelFlags::default(); x.num_blocks()];
    for j in 0..x.num_blocks() {
        let (ax, by) = (x.scale(j), y.scale(j));
        let gamma = ax.min(by);
        let to_x = gamma.exponent() - ax.exponent();
        let to_y = gamma.exponent() - by.exponent();
        let xn = scale_pow2(x.norm(j), to_x);
        let yn = scale_pow2(y.norm(j), to_y);
        let delta = protect_update(yn, m_norm, xn)?;
        flags[j].underflow |= x.apply_scaling(j, ScalingExponent::new(to_x + delta.exponent()));
        flags[j].underflow |= y.apply_scaling(j, ScalingExponent::new(to_y + delta.exponent()));
        debug_assert_eq!(x.scale(j), y.scale(j));
    }
    gemm_update(y.values_mut(), m, x.values(), sign);
    y.refresh_norms();
    Ok(flags)
}

/// `y ∓= a x`, column by column; each entry of `y` receives its updates in
/// increasing `k`, independent of how many columns `x` has.
pub(crate) fn gemm_update(y: &mut Matrix, a: MatRef<'_>, x: &Matrix, sign: UpdateSign) {
    debug_assert_eq!(a.rows(), y.rows());
    debug_assert_eq!(a.cols(), x.rows());
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2.
        unsafe { gemm_update_avx2(y, a, x, sign) };
        return;
    }
    gemm_update_generic(y, a, x, sign);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn gemm_update_avx2(y: &mut Matrix, a: MatRef<'_>, x: &Matrix, sign: UpdateSign) {
    gemm_update_generic(y, a, x, sign);
}

const CHUNK: usize = 8;

// Each entry of Y receives `y -= a_k * c_k` for ascending k, skipping k whose
// coefficients are all zero, whatever the vector width.
#[inline(always)]
fn gemm_update_generic(y: &mut Matrix, a: MatRef<'_>, x: &Matrix, sign: UpdateSign) {
    let rows = y.rows();
    let inner = x.rows();
    let ncols = x.cols();
    let ydata = y.as_mut_slice();
    let coef = |k: usize, j: usize| if sign == UpdateSign::Add { -x[(k, j)] } else { x[(k, j)] };
    let mut terms: Vec<(&[f64], [f64; 4])> = Vec::with_capacity(inner);
    let mut j = 0;
    while j + 4 <= ncols {
        terms.clear();
        for k in 0..inner {
            let c = [coef(k, j), coef(k, j + 1), coef(k, j + 2), coef(k, j + 3)];
            if c != [0.0; 4] {
                terms.push((a.col(k), c));
            }
        }
        let ys = &mut ydata[j * rows..(j + 4) * rows];
        let mut r = 0;
        while r + CHUNK <= rows {
            let mut acc = [[0.0f64; CHUNK]; 4];
            for (q, accq) in acc.iter_mut().enumerate() {
                accq.copy_from_slice(&ys[q * rows + r..q * rows + r + CHUNK]);
            }
            for (acol, c) in &terms {
                let av: &[f64; CHUNK] = acol[r..r + CHUNK].try_into().unwrap();
                for (accq, &cq) in acc.iter_mut().zip(c) {
                    for l in 0..CHUNK {
                        accq[l] -= av[l] * cq;
                    }
                }
            }
            for (q, accq) in acc.iter().enumerate() {
                ys[q * rows + r..q * rows + r + CHUNK].copy_from_slice(accq);
            }
            r += CHUNK;
        }
        for r in r..rows {
            for q in 0..4 {
                let mut v = ys[q * rows + r];
                for (acol, c) in &terms {
                    v -= acol[r] * c[q];
                }
                ys[q * rows + r] = v;
            }
        }
        j += 4;
    }
    while j < ncols {
        let ycol = &mut ydata[j * rows..(j + 1) * rows];
        for k in 0..inner {
            let c = coef(k, j);
            if c == 0.0 {
                continue;
            }
            let acol = a.col(k);
            for r in 0..rows {
                ycol[r] -= acol[r] * c;
            }
        }
        j += 1;
    }
}

/// Robust `Y <- Y - (S X D - T X B)` on one tile: two right multiplications
/// and two left updates.
pub fn robust_tile_update(
    s: MatRef<'_>,
    s_norm: f64,
    t: MatRef<'_>,
    t_norm: f64,
    x: &AugmentedMatrix,
    specs: &[SpectralBlock],
    y: &mut AugmentedMatrix,
) -> Result<Vec<KernelFlags>> {
    let ds: Vec<SmallMatrix> = specs.iter().map(|p| p.d()).collect();
    let bs: Vec<SmallMatrix> = specs.iter().map(|p| p.b_mat()).collect();
    let (x1, mut flags) = robust_right_multiply(x, &ds)?;
    merge(&mut flags, robust_left_update(s, s_norm, x1, y, UpdateSign::Subtract)?);
    let (x2, f) = robust_right_multiply(x, &bs)?;
    merge(&mut flags, f);
    merge(&mut flags, robust_left_update(t, t_norm, x2, y, UpdateSign::Add)?);
    Ok(flags)
}

/// Element-wise OR of per-block flags.
pub fn merge(into: &mut [KernelFlags], from: Vec<KernelFlags>) {
    for (a, b) in into.iter_mut().zip(from) {
        *a |= b;
    }
}

/// Norms of all tiles needed by the robust kernels.
#[derive(Clone, Debug)]
pub struct TileNorms {
    tiles: usize,
    s: Vec<f64>,
    t: Vec<f64>,
    /// Largest entry magnitude of each diagonal tile of S and T.
    pub diag_max: Vec<f64>,
    /// Per diagonal tile: norms of the column parts above each micro block.
    pub micro_cols: Vec<Vec<(f64, f64)>>,
}

impl TileNorms {
    /// `||S_ki||_inf` for `k <= i` (saturated at `OMEGA`).
    pub fn s_norm(&self, k: usize, i: usize) -> f64 {
        self.s[k * self.tiles + i]
    }

    pub fn t_norm(&self, k: usize, i: usize) -> f64 {
        self.t[k * self.tiles + i]
    }

    /// Whether some tile norm reached the threshold.
    pub fn saturated(&self) -> bool {
        self.s.iter().chain(&self.t).any(|&n| n >= OMEGA)
    }
}

/// Infinity norms of every upper tile of `S` and `T`, with row sums that
/// saturate at `OMEGA` rather than overflow.
pub fn compute_tile_norms(pencil: &RealSchurPencil, partition: &TilePartition) -> TileNorms {
    let nt = partition.num_tiles();
    let mut out = TileNorms { tiles: nt, s: vec![0.0; nt * nt], t: vec![0.0; nt * nt], diag_max: vec![0.0; nt], micro_cols: Vec::with_capacity(nt) };
    for i in 0..nt {
        let (c0, cw) = (partition.tile_start(i), partition.tile_size(i));
        for k in 0..=i {
            let (r0, rw) = (partition.tile_start(k), partition.tile_size(k));
            out.s[k * nt + i] = pencil.s().view(r0, c0, rw, cw).inf_norm();
            out.t[k * nt + i] = pencil.t().view(r0, c0, rw, cw).inf_norm();
        }
        let sd = pencil.s().view(c0, c0, cw, cw);
        let td = pencil.t().view(c0, c0, cw, cw);
        out.diag_max[i] = sd.to_matrix().max_abs().max(td.to_matrix().max_abs());
        out.micro_cols.push(micro_column_norms(sd, td, partition.tile_blocks(i)));
    }
    out
}
