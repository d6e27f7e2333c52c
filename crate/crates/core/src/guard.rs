//! Overflow protection: the overflow threshold, power-of-two scaling exponents,
//! the two protect functions and augmented (scaled) matrices.
//!
//! An augmented matrix stores a value block `X` together with a scaling
//! `alpha = 2^e`, `e <= 0`, and represents the true matrix `X / alpha`. Every
//! scaling in this crate is an exact power of two, so rescaling only loses
//! information through gradual underflow.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Overflow threshold (largest finite double).
pub const OMEGA: f64 = f64::MAX;
/// Unit roundoff of IEEE double precision, `2^-53`.
pub const UNIT_ROUNDOFF: f64 = 1.1102230246251565e-16;
/// Smallest safe denominator: smallest normal number divided by the unit roundoff.
pub const SMLNUM: f64 = f64::MIN_POSITIVE / UNIT_ROUNDOFF;

/// Machine constants used by the overflow protection logic.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OverflowConstants {
    pub omega: f64,
    pub u: f64,
    pub smlnum: f64,
}

impl OverflowConstants {
    pub const fn double() -> Self {
        Self { omega: OMEGA, u: UNIT_ROUNDOFF, smlnum: SMLNUM }
    }
}

impl Default for OverflowConstants {
    fn default() -> Self {
        Self::double()
    }
}

/// Power-of-two scaling factor `2^e` with `e <= 0`, stored as the exponent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ScalingExponent(i32);

impl ScalingExponent {
    pub const ONE: ScalingExponent = ScalingExponent(0);
    pub const MIN: ScalingExponent = ScalingExponent(i32::MIN + 1);

    /// Panics if `e > 0`.
    pub fn new(e: i32) -> Self {
        assert!(e <= 0, "scaling exponent must be non-positive, got {e}");
        ScalingExponent(e.max(i32::MIN + 1))
    }

    #[inline]
    pub fn exponent(self) -> i32 {
        self.0
    }

    #[inline]
    pub fn is_one(self) -> bool {
        self.0 == 0
    }

    /// Product of two scalings.
    #[inline]
    pub fn compose(self, other: ScalingExponent) -> ScalingExponent {
        ScalingExponent(self.0.saturating_add(other.0).max(i32::MIN + 1))
    }

    /// The factor `2^e` as a double; zero when it is below the subnormal range.
    pub fn factor(self) -> f64 {
        scale_pow2(1.0, self.0)
    }
}

/// `x * 2^e` with a single rounding.
#[inline]
pub fn scale_pow2(x: f64, e: i32) -> f64 {
    if (-1022..=1023).contains(&e) {
        x * pow2(e)
    } else {
        libm::scalbn(x, e)
    }
}

/// `2^e` for `e` in the normal exponent range.
#[inline]
pub(crate) fn pow2(e: i32) -> f64 {
    debug_assert!((-1022..=1023).contains(&e));
    f64::from_bits(((e + 1023) as u64) << 52)
}

/// Exact decomposition of a non-negative finite double as `m * 2^e`.
#[inline]
fn decompose(x: f64) -> (u128, i32) {
    let bits = x.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i32;
    let frac = bits & ((1u64 << 52) - 1);
    if exp == 0 {
        (frac as u128, -1074)
    } else {
        ((frac | (1u64 << 52)) as u128, exp - 1075)
    }
}

/// Exact comparison `m1 * 2^e1 <= m2 * 2^e2`.
fn dyadic_le(m1: u128, e1: i32, m2: u128, e2: i32) -> bool {
    if m1 == 0 {
        return true;
    }
    if m2 == 0 {
        return false;
    }
    let l1 = (128 - m1.leading_zeros()) as i64 + e1 as i64;
    let l2 = (128 - m2.leading_zeros()) as i64 + e2 as i64;
    if l1 != l2 {
        return l1 < l2;
    }
    // Equal magnitude orders: aligning the mantissas never exceeds 128 bits.
    if e1 >= e2 {
        (m1 << (e1 - e2) as u32) <= m2
    } else {
        m1 <= (m2 << (e2 - e1) as u32)
    }
}

/// Exact test of `b * 2^k <= t * OMEGA` for non-negative finite `b`, `t`.
fn scaled_le_t_omega(b: f64, k: i32, t: f64) -> bool {
    let (mb, eb) = decompose(b);
    let (mt, et) = decompose(t);
    let (mo, eo) = decompose(OMEGA);
    dyadic_le(mb, eb + k, mt * mo, et + eo)
}

fn check_norm_arg(v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::ExceedsOverflow { value: v })
    }
}

/// Scaling `xi = 2^e` such that `xi * b_abs <= t_abs * OMEGA`, so that the
/// division `(xi * b) / t` cannot exceed the overflow threshold.
///
/// Returns `e = 0` whenever the unscaled division is already safe, otherwise
/// the largest power of two not exceeding `t_abs * OMEGA / (2 b_abs)`.
pub fn protect_division(b_abs: f64, t_abs: f64) -> Result<ScalingExponent> {
    check_norm_arg(b_abs)?;
    check_norm_arg(t_abs)?;
    if t_abs == 0.0 {
        return Err(Error::ZeroDenominator);
    }
    if t_abs >= 1.0 || b_abs == 0.0 {
        return Ok(ScalingExponent::ONE);
    }
    // t < 1, so t * OMEGA is finite.
    if b_abs <= t_abs * OMEGA * (1.0 - 4.0 * UNIT_ROUNDOFF) || scaled_le_t_omega(b_abs, 0, t_abs) {
        return Ok(ScalingExponent::ONE);
    }
    // Largest e with b * 2^(e+1) <= t * OMEGA; the estimate is off by at most two.
    let est = floor_log2(t_abs) + 1023 - floor_log2(b_abs) - 1;
    let mut e = est.min(0);
    while !scaled_le_t_omega(b_abs, e + 1, t_abs) {
        e -= 1;
    }
    while e < 0 && scaled_le_t_omega(b_abs, e + 2, t_abs) {
        e += 1;
    }
    Ok(ScalingExponent::new(e))
}

/// Scaling `xi = 2^e` such that `xi * (y_norm + t_norm * x_norm) <= OMEGA`, so
/// that `(xi Y) - T (xi X)` can be formed without exceeding the threshold.
///
/// Uses `s = y/OMEGA + (t/OMEGA) x`, which cannot overflow. When scaling is
/// needed, `e = floor(log2(1 / (2 s)))`.
pub fn protect_update(y_norm: f64, t_norm: f64, x_norm: f64) -> Result<ScalingExponent> {
    check_norm_arg(y_norm)?;
    check_norm_arg(t_norm)?;
    check_norm_arg(x_norm)?;
    let s = y_norm / OMEGA + (t_norm / OMEGA) * x_norm;
    if s <= 1.0 - 8.0 * UNIT_ROUNDOFF {
        return Ok(ScalingExponent::ONE);
    }
    if s <= 1.0 + 8.0 * UNIT_ROUNDOFF {
        // Too close to the threshold to decide in floating point.
        if t_norm == 0.0 || x_norm == 0.0 {
            return Ok(ScalingExponent::ONE);
        }
        return Ok(ScalingExponent::new(-1));
    }
    let (frac, exp) = libm::frexp(s);
    // 1/(2s) = 2^(-exp-1) / frac with frac in [0.5, 1).
    let e = if frac == 0.5 { -exp } else { -exp - 1 };
    Ok(ScalingExponent::new(e))
}

/// `floor(log2(x))` for positive finite `x`.
#[inline]
pub fn floor_log2(x: f64) -> i32 {
    debug_assert!(x > 0.0 && x.is_finite());
    let (_, e) = libm::frexp(x);
    e - 1
}

/// Largest scaling exponent shared by a set of segments: their minimum.
pub fn consistent_scaling(scales: &[ScalingExponent]) -> Result<ScalingExponent> {
    scales.iter().copied().min().ok_or(Error::EmptySegments)
}

/// Column block of an augmented matrix: `width` adjacent columns sharing one
/// scaling (one real eigenvector segment, or the real/imaginary pair of a
/// complex one).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColumnBlock {
    pub start: usize,
    pub width: usize,
    pub scale: ScalingExponent,
    /// Cached infinity norm of the stored block.
    pub norm: f64,
}

/// Augmented matrix: stored values partitioned into column blocks, each with
/// its own power-of-two scaling. Block `j` represents `values_j * 2^(-e_j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedMatrix {
    values: Matrix,
    blocks: Vec<ColumnBlock>,
}

impl AugmentedMatrix {
    /// Zero matrix with the given column block widths, all scalings one.
    pub fn zeros(rows: usize, widths: &[usize]) -> Self {
        let cols = widths.iter().sum();
        Self::from_values(Matrix::zeros(rows, cols), widths)
    }

    /// Wraps values with unit scalings.
    pub fn from_values(values: Matrix, widths: &[usize]) -> Self {
        assert_eq!(widths.iter().sum::<usize>(), values.cols(), "block widths must cover the columns");
        let mut start = 0;
        let blocks = widths
            .iter()
            .map(|&w| {
                let b = ColumnBlock { start, width: w, scale: ScalingExponent::ONE, norm: 0.0 };
                start += w;
                b
            })
            .collect();
        let mut out = Self { values, blocks };
        out.refresh_norms();
        out
    }

    /// Single block spanning all columns with scaling `scale`.
    pub fn segment(values: Matrix, scale: ScalingExponent) -> Self {
        let w = values.cols();
        let mut out = Self::from_values(values, &[w]);
        out.blocks[0].scale = scale;
        out
    }

    #[inline]
    pub fn values(&self) -> &Matrix {
        &self.values
    }

    /// Mutable access to the stored values; callers must refresh norms.
    #[inline]
    pub fn values_mut(&mut self) -> &mut Matrix {
        &mut self.values
    }

    #[inline]
    pub fn blocks(&self) -> &[ColumnBlock] {
        &self.blocks
    }

    #[inline]
    pub fn block(&self, j: usize) -> &ColumnBlock {
        &self.blocks[j]
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn scale(&self, j: usize) -> ScalingExponent {
        self.blocks[j].scale
    }

    pub fn set_scale(&mut self, j: usize, scale: ScalingExponent) {
        self.blocks[j].scale = scale;
    }

    pub fn norm(&self, j: usize) -> f64 {
        self.blocks[j].norm
    }

    /// Stored values of block `j` (a `rows × width` copy).
    pub fn block_values(&self, j: usize) -> Matrix {
        let b = self.blocks[j];
        self.values.submatrix(0, b.start, self.values.rows(), b.width)
    }

    pub fn refresh_norm(&mut self, j: usize) {
        let b = self.blocks[j];
        let n = self.values.view(0, b.start, self.values.rows(), b.width).inf_norm_raw();
        record_stored_norm(n);
        self.blocks[j].norm = n.min(f64::MAX);
    }

    pub fn refresh_norms(&mut self) {
        for j in 0..self.blocks.len() {
            self.refresh_norm(j);
        }
    }

    /// Multiplies block `j` by `xi` and folds `xi` into its scaling.
    /// Returns whether a nonzero entry fell below the normal range.
    pub fn apply_scaling(&mut self, j: usize, xi: ScalingExponent) -> bool {
        if xi.is_one() {
            return false;
        }
        let b = self.blocks[j];
        let rows = self.values.rows();
        let data = &mut self.values.as_mut_slice()[b.start * rows..(b.start + b.width) * rows];
        let underflow = scale_slice(data, xi.exponent());
        self.blocks[j].scale = b.scale.compose(xi);
        self.blocks[j].norm = scale_pow2(b.norm, xi.exponent());
        underflow
    }

    /// Rescales block `j` down to the scaling `target`. The represented true
    /// values are unchanged except for gradual underflow, which is reported.
    pub fn rescale_to(&mut self, j: usize, target: ScalingExponent) -> Result<bool> {
        let current = self.blocks[j].scale;
        if target > current {
            return Err(Error::Upscale { current: current.exponent(), target: target.exponent() });
        }
        let delta = ScalingExponent::new(target.exponent() - current.exponent());
        let underflow = self.apply_scaling(j, delta);
        self.refresh_norm(j);
        Ok(underflow)
    }

    /// True (unscaled) value of entry `(i, c)`, possibly overflowing to infinity.
    pub fn true_value(&self, i: usize, c: usize) -> f64 {
        let j = self.blocks.iter().position(|b| c >= b.start && c < b.start + b.width).unwrap();
        scale_pow2(self.values[(i, c)], -self.blocks[j].scale.exponent())
    }

    pub fn into_values(self) -> Matrix {
        self.values
    }
}

/// Multiplies every entry by `2^e` (`e <= 0`); reports gradual underflow.
pub(crate) fn scale_slice(data: &mut [f64], e: i32) -> bool {
    if e == 0 {
        return false;
    }
    let mut underflow = false;
    if e >= -1022 {
        let f = pow2(e);
        for v in data.iter_mut() {
            let r = *v * f;
            underflow |= *v != 0.0 && r.abs() < f64::MIN_POSITIVE;
            *v = r;
        }
    } else {
        for v in data.iter_mut() {
            let r = libm::scalbn(*v, e);
            underflow |= *v != 0.0 && r.abs() < f64::MIN_POSITIVE;
            *v = r;
        }
    }
    underflow
}

#[cfg(debug_assertions)]
static NORM_VIOLATIONS: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);

/// Debug instrumentation: every stored norm written through an augmented
/// matrix is checked against the threshold.
#[inline]
pub(crate) fn record_stored_norm(norm: f64) {
    #[cfg(debug_assertions)]
    {
        if !(norm <= OMEGA) {
            NORM_VIOLATIONS.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        }
    }
    #[cfg(not(debug_assertions))]
    let _ = norm;
}

/// Number of stored blocks observed with a norm above the threshold (or NaN).
/// Always zero in release builds, where the instrumentation is compiled out.
pub fn stored_norm_violations() -> u64 {
    #[cfg(debug_assertions)]
    {
        NORM_VIOLATIONS.load(std::sync::atomic::Ordering::Relaxed)
    }
    #[cfg(not(debug_assertions))]
    {
        0
    }
}

/// Whether the overflow instrumentation is compiled in.
pub const INSTRUMENTED: bool = cfg!(debug_assertions);
