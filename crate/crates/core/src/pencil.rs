//! Matrix pencils in generalized real Schur form, their eigenvalue pairs and
//! the block-diagonal spectral pair `(D, B)`.
//!
//! For an eigenvalue `lambda = (a + ib) / beta` of diagonal block `j`, the
//! eigenvector columns `V_j` solve `S V_j D_jj - T V_j B_jj = 0` with
//! `D_jj = beta I` and `B_jj = a` (1×1 block) or `[[a, b], [-b, a]]` (2×2).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guard::floor_log2;
use crate::matrix::Matrix;

/// Diagonal block of `S`: rows/columns `start..start + size`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagBlock {
    pub start: usize,
    pub size: usize,
}

impl DiagBlock {
    #[inline]
    pub fn end(&self) -> usize {
        self.start + self.size
    }
}

/// Pencil `(S, T)` with `S` quasi-upper-triangular and `T` upper triangular
/// with nonnegative diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct RealSchurPencil {
    s: Matrix,
    t: Matrix,
    blocks: Vec<DiagBlock>,
}

impl RealSchurPencil {
    /// Validates `(S, T)` and infers the diagonal block structure from the
    /// nonzero subdiagonal entries of `S`.
    pub fn validate(s: Matrix, t: Matrix) -> Result<Self> {
        check_shapes_and_entries(&s, &t)?;
        let m = s.rows();
        let mut blocks = Vec::with_capacity(m);
        let mut i = 0;
        while i < m {
            if i + 1 < m && s[(i + 1, i)] != 0.0 {
                if i + 2 < m && s[(i + 2, i + 1)] != 0.0 {
                    return Err(Error::OverlappingBlocks { first: i, second: i + 1 });
                }
                blocks.push(DiagBlock { start: i, size: 2 });
                i += 2;
            } else {
                blocks.push(DiagBlock { start: i, size: 1 });
                i += 1;
            }
        }
        Self::finish(s, t, blocks)
    }

    /// Validates `(S, T)` against an explicitly declared block structure.
    pub fn with_blocks(s: Matrix, t: Matrix, blocks: Vec<DiagBlock>) -> Result<Self> {
        check_shapes_and_entries(&s, &t)?;
        let m = s.rows();
        let mut next = 0;
        for b in &blocks {
            if b.start != next || !(b.size == 1 || b.size == 2) || b.end() > m {
                return Err(Error::BlockStructure { row: b.start, reason: "blocks must tile the diagonal with sizes 1 or 2".into() });
            }
            next = b.end();
        }
        if next != m {
            return Err(Error::BlockStructure { row: next, reason: "blocks do not cover the diagonal".into() });
        }
        for b in &blocks {
            if b.end() < m && s[(b.end(), b.end() - 1)] != 0.0 {
                return Err(Error::BlockStructure { row: b.end(), reason: "nonzero subdiagonal outside a declared 2x2 block".into() });
            }
        }
        Self::finish(s, t, blocks)
    }

    fn finish(s: Matrix, t: Matrix, blocks: Vec<DiagBlock>) -> Result<Self> {
        for (k, b) in blocks.iter().enumerate() {
            if b.size == 2 {
                let i = b.start;
                let a = [[s[(i, i)], s[(i, i + 1)]], [s[(i + 1, i)], s[(i + 1, i + 1)]]];
                let c = [[t[(i, i)], t[(i, i + 1)]], [0.0, t[(i + 1, i + 1)]]];
                eig2x2(&a, &c).ok_or(Error::RealEigenvaluesInBlock { block: k, row: i })?;
            }
        }
        Ok(Self { s, t, blocks })
    }

    /// Builds a pencil whose structure is known to be valid.
    pub(crate) fn from_parts_unchecked(s: Matrix, t: Matrix, blocks: Vec<DiagBlock>) -> Self {
        Self { s, t, blocks }
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.s.rows()
    }

    #[inline]
    pub fn s(&self) -> &Matrix {
        &self.s
    }

    #[inline]
    pub fn t(&self) -> &Matrix {
        &self.t
    }

    #[inline]
    pub fn blocks(&self) -> &[DiagBlock] {
        &self.blocks
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn into_parts(self) -> (Matrix, Matrix, Vec<DiagBlock>) {
        (self.s, self.t, self.blocks)
    }

    /// Block `k` of `S` as a 2×2 array (unused entries zero).
    pub(crate) fn block_pair(&self, k: usize) -> ([[f64; 2]; 2], [[f64; 2]; 2]) {
        let b = self.blocks[k];
        let i = b.start;
        if b.size == 1 {
            ([[self.s[(i, i)], 0.0], [0.0, 0.0]], [[self.t[(i, i)], 0.0], [0.0, 0.0]])
        } else {
            (
                [[self.s[(i, i)], self.s[(i, i + 1)]], [self.s[(i + 1, i)], self.s[(i + 1, i + 1)]]],
                [[self.t[(i, i)], self.t[(i, i + 1)]], [0.0, self.t[(i + 1, i + 1)]]],
            )
        }
    }
}

fn check_shapes_and_entries(s: &Matrix, t: &Matrix) -> Result<()> {
    if !s.is_square() || !t.is_square() || s.rows() != t.rows() || s.rows() == 0 {
        return Err(Error::DimensionMismatch {
            expected: "two nonempty square matrices of equal size".into(),
            got: format!("S {}x{}, T {}x{}", s.rows(), s.cols(), t.rows(), t.cols()),
        });
    }
    let m = s.rows();
    for j in 0..m {
        for i in 0..m {
            if !s[(i, j)].is_finite() || !t[(i, j)].is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
            if i > j + 1 && s[(i, j)] != 0.0 {
                return Err(Error::NotQuasiTriangular { row: i, col: j });
            }
            if i > j && t[(i, j)] != 0.0 {
                return Err(Error::NotTriangular { row: i, col: j });
            }
        }
        if t[(j, j)] < 0.0 {
            return Err(Error::NegativeDiagonal { index: j });
        }
    }
    Ok(())
}

/// Generalized eigenvalue `lambda = alpha / beta` with `alpha = a + ib`.
/// For a 2×2 block the representative with `b > 0` is stored; its conjugate
/// `(a, -b, beta)` is implied.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenvaluePair {
    pub a: f64,
    pub b: f64,
    pub beta: f64,
    pub block_index: usize,
    pub block_size: usize,
}

impl EigenvaluePair {
    pub fn is_infinite(&self) -> bool {
        self.beta == 0.0 && !self.is_indefinite()
    }

    pub fn is_zero(&self) -> bool {
        self.a == 0.0 && self.b == 0.0 && self.beta > 0.0
    }

    pub fn is_indefinite(&self) -> bool {
        self.a == 0.0 && self.b == 0.0 && self.beta == 0.0
    }

    pub fn is_complex(&self) -> bool {
        self.block_size == 2
    }

    /// `|alpha|`, computed without overflow.
    pub fn alpha_abs(&self) -> f64 {
        self.a.hypot(self.b)
    }
}

/// Eigenvalue pairs of every diagonal block, in block order.
pub fn extract_eigenvalues(pencil: &RealSchurPencil) -> Result<Vec<EigenvaluePair>> {
    (0..pencil.num_blocks())
        .map(|k| {
            let blk = pencil.blocks[k];
            let (sa, ta) = pencil.block_pair(k);
            if blk.size == 1 {
                Ok(EigenvaluePair { a: sa[0][0], b: 0.0, beta: ta[0][0], block_index: k, block_size: 1 })
            } else {
                let (a, b, beta) = eig2x2(&sa, &ta).ok_or(Error::RealEigenvaluesInBlock { block: k, row: blk.start })?;
                Ok(EigenvaluePair { a, b, beta, block_index: k, block_size: 2 })
            }
        })
        .collect()
}

/// Complex-conjugate eigenvalue pair `(a ± ib) / beta` of the 2×2 pencil
/// `(A, C)` with `C` upper triangular, or `None` when the eigenvalues are real
/// (including infinite ones).
///
/// Both matrices are scaled by powers of two into `[1/2, 1)`, the
/// characteristic polynomial `c11 c22 mu^2 - p mu + det(A)` is formed in the
/// scaled variables, and the pair is reconstituted with `beta = ||C||_inf`
/// when that is representable.
pub(crate) fn eig2x2(a: &[[f64; 2]; 2], c: &[[f64; 2]; 2]) -> Option<(f64, f64, f64)> {
    let amax = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let cmax = c.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    if amax == 0.0 || cmax == 0.0 {
        return None;
    }
    let ka = floor_log2(amax) + 1;
    let kc = floor_log2(cmax) + 1;
    let sa = |v: f64| crate::guard::scale_pow2(v, -ka);
    let sc = |v: f64| crate::guard::scale_pow2(v, -kc);
    let (a11, a12, a21, a22) = (sa(a[0][0]), sa(a[0][1]), sa(a[1][0]), sa(a[1][1]));
    let (c11, c12, c22) = (sc(c[0][0]), sc(c[0][1]), sc(c[1][1]));
    let quad = c11 * c22;
    if quad <= 0.0 {
        return None;
    }
    let half_lin = 0.5 * (a11 * c22 + a22 * c11 - a21 * c12);
    let det = a11 * a22 - a12 * a21;
    let disc = quad * det - half_lin * half_lin;
    if disc <= 0.0 {
        return None;
    }
    // mu = (half_lin ± i sqrt(disc)) / quad solves the scaled pencil;
    // lambda = mu * 2^(ka - kc).
    let q = disc.sqrt();
    let beta_target = c[0][0].abs().max(c[1][1].abs()) + c[0][1].abs();
    let shift = ka - kc;
    let re = crate::guard::scale_pow2(half_lin / quad, shift) * beta_target;
    let im = crate::guard::scale_pow2(q / quad, shift) * beta_target;
    if re.is_finite() && im.is_finite() && im > 0.0 {
        return Some((re, im, beta_target));
    }
    // Homogeneous fallback: (half_lin + iq) 2^(ka-M), quad 2^(kc-M).
    let top = ka.max(kc);
    Some((
        crate::guard::scale_pow2(half_lin, ka - top),
        crate::guard::scale_pow2(q, ka - top),
        crate::guard::scale_pow2(quad, kc - top),
    ))
}

/// Per-block eigenvalue selection; a 2×2 block is always selected as a unit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Selection {
    include: Vec<bool>,
}

impl Selection {
    pub fn all(num_blocks: usize) -> Self {
        Self { include: vec![true; num_blocks] }
    }

    pub fn none(num_blocks: usize) -> Self {
        Self { include: vec![false; num_blocks] }
    }

    /// Selects the listed block indices (0-based).
    pub fn from_blocks(num_blocks: usize, blocks: &[usize]) -> Result<Self> {
        let mut sel = Self::none(num_blocks);
        for &k in blocks {
            if k >= num_blocks {
                return Err(Error::BlockOutOfRange { block: k, count: num_blocks });
            }
            sel.include[k] = true;
        }
        Ok(sel)
    }

    /// Selection from a per-eigenvalue (per-row) mask; rejects masks that
    /// separate the two conjugate eigenvalues of a 2×2 block.
    pub fn from_eigenvalue_mask(pencil: &RealSchurPencil, mask: &[bool]) -> Result<Self> {
        if mask.len() != pencil.m() {
            return Err(Error::DimensionMismatch { expected: format!("mask of length {}", pencil.m()), got: mask.len().to_string() });
        }
        let mut include = Vec::with_capacity(pencil.num_blocks());
        for (k, b) in pencil.blocks().iter().enumerate() {
            let first = mask[b.start];
            if b.size == 2 && mask[b.start + 1] != first {
                return Err(Error::SelectionSplitsBlock { block: k });
            }
            include.push(first);
        }
        Ok(Self { include })
    }

    #[inline]
    pub fn contains(&self, block: usize) -> bool {
        self.include[block]
    }

    pub fn len(&self) -> usize {
        self.include.len()
    }

    pub fn is_empty(&self) -> bool {
        !self.include.iter().any(|&b| b)
    }

    pub fn selected(&self) -> impl Iterator<Item = usize> + '_ {
        self.include.iter().enumerate().filter(|(_, &b)| b).map(|(k, _)| k)
    }
}

/// Spectral blocks `D_jj`, `B_jj` for one eigenvalue.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralBlock {
    pub size: usize,
    pub beta: f64,
    pub a: f64,
    pub b: f64,
}

impl SpectralBlock {
    pub fn from_pair(p: &EigenvaluePair) -> Self {
        Self { size: p.block_size, beta: p.beta, a: p.a, b: if p.block_size == 2 { p.b } else { 0.0 } }
    }

    /// `D_jj` (top-left `size × size` part is meaningful).
    pub fn d(&self) -> [[f64; 2]; 2] {
        if self.size == 1 {
            [[self.beta, 0.0], [0.0, 0.0]]
        } else {
            [[self.beta, 0.0], [0.0, self.beta]]
        }
    }

    /// `B_jj` (top-left `size × size` part is meaningful).
    pub fn b_mat(&self) -> [[f64; 2]; 2] {
        if self.size == 1 {
            [[self.a, 0.0], [0.0, 0.0]]
        } else {
            [[self.a, self.b], [-self.b, self.a]]
        }
    }

    /// `||D_jj||_inf`.
    pub fn d_norm(&self) -> f64 {
        self.beta.abs()
    }

    /// `||B_jj||_inf`.
    pub fn b_norm(&self) -> f64 {
        self.a.abs() + self.b.abs()
    }
}

/// Spectral blocks of the selected eigenvalues, keyed by block index.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralBlocks {
    pub entries: Vec<(usize, SpectralBlock)>,
}

impl SpectralBlocks {
    pub fn get(&self, block: usize) -> Option<&SpectralBlock> {
        self.entries.iter().find(|(k, _)| *k == block).map(|(_, s)| s)
    }
}

pub fn build_spectral_blocks(eigs: &[EigenvaluePair], sel: &Selection) -> Result<SpectralBlocks> {
    if sel.len() != eigs.len() {
        return Err(Error::DimensionMismatch { expected: format!("selection over {} blocks", eigs.len()), got: sel.len().to_string() });
    }
    Ok(SpectralBlocks {
        entries: eigs.iter().filter(|p| sel.contains(p.block_index)).map(|p| (p.block_index, SpectralBlock::from_pair(p))).collect(),
    })
}
