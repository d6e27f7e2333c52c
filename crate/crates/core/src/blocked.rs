//! Sequential blocked eigenvector solver: pencil pre-scaling, tile-level
//! backward substitution per column group, and post-processing.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guard::{floor_log2, scale_pow2, scale_slice, AugmentedMatrix, ScalingExponent, OMEGA};
use crate::kernels::{compute_tile_norms, compute_tip, merge, robust_tile_update, solve_tile, DiagTile, KernelFlags, TileNorms};
use crate::matrix::Matrix;
use crate::partition::{ColumnSlot, TilePartition};
use crate::pencil::{extract_eigenvalues, EigenvaluePair, RealSchurPencil, SpectralBlock};

/// Per-column (per eigenvalue block) metadata of a solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnInfo {
    pub block: usize,
    /// First column in the eigenvector matrix.
    pub col: usize,
    pub width: usize,
    /// Eigenvalue pair in the units of the input pencil.
    pub eigenvalue: EigenvaluePair,
    /// Unified scaling exponent of the raw eigenvector before normalization.
    pub exponent: i32,
    pub perturbed: bool,
    pub underflow: bool,
    pub indefinite: bool,
    pub error: Option<String>,
}

/// Normalized eigenvectors: real vectors as single columns, complex ones as
/// adjacent `[x y]` columns.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenvectorResult {
    pub vectors: Matrix,
    pub columns: Vec<ColumnInfo>,
    /// Power-of-two exponents applied to `S` and `T` before solving.
    pub prescale: (i32, i32),
}

impl EigenvectorResult {
    pub fn eigenvalues(&self) -> Vec<EigenvaluePair> {
        self.columns.iter().map(|c| c.eigenvalue).collect()
    }

    /// Columns that could not be computed.
    pub fn failures(&self) -> impl Iterator<Item = &ColumnInfo> {
        self.columns.iter().filter(|c| c.error.is_some())
    }
}

/// Largest tile row sum of `a` over the partition, multiplied by `2^-shift`
/// so that it cannot overflow.
fn scaled_max_tile_row_sum(a: &Matrix, part: &TilePartition, shift: i32) -> f64 {
    let nt = part.num_tiles();
    let mut best = 0.0f64;
    let mut sums = Vec::new();
    for k in 0..nt {
        let (r0, rw) = (part.tile_start(k), part.tile_size(k));
        for i in k..nt {
            sums.clear();
            sums.resize(rw, 0.0f64);
            for c in part.tile_start(i)..part.tile_start(i) + part.tile_size(i) {
                for (s, &v) in sums.iter_mut().zip(&a.col(c)[r0..r0 + rw]) {
                    *s += scale_pow2(v.abs(), -shift);
                }
            }
            best = sums.iter().fold(best, |m, &s| m.max(s));
        }
    }
    best
}

fn prescale_exponent(a: &Matrix, part: &TilePartition) -> i32 {
    let shift = (usize::BITS - a.rows().leading_zeros()) as i32 + 1;
    let scaled = scaled_max_tile_row_sum(a, part, shift);
    // smallest k >= 0 with scaled * 2^(shift - k) <= OMEGA / 2
    let mut k = 0;
    while scaled > scale_pow2(OMEGA / 2.0, k - shift) {
        k += 1;
    }
    -k
}

/// Exponents `(e_S, e_T)` that bring every tile norm of `S` and `T` to at most `OMEGA / 2`.
pub fn prescale_exponents(pencil: &RealSchurPencil, part: &TilePartition) -> (i32, i32) {
    (prescale_exponent(pencil.s(), part), prescale_exponent(pencil.t(), part))
}

/// Pencil scaled by `(2^e_S, 2^e_T)` so that all tile norms are at most `OMEGA / 2`.
pub fn prescale_pencil(pencil: &RealSchurPencil, part: &TilePartition) -> (RealSchurPencil, i32, i32) {
    let (es, et) = prescale_exponents(pencil, part);
    (apply_prescale(pencil, es, et), es, et)
}

fn apply_prescale(pencil: &RealSchurPencil, es: i32, et: i32) -> RealSchurPencil {
    let mut s = pencil.s().clone();
    let mut t = pencil.t().clone();
    scale_slice(s.as_mut_slice(), es);
    scale_slice(t.as_mut_slice(), et);
    RealSchurPencil::from_parts_unchecked(s, t, pencil.blocks().to_vec())
}

/// Eigenvalue pair scaled by a power of two so that `beta <= 1` and
/// `|a| + |b| <= 1`; `None` for an indefinite pair.
pub fn working_pair(p: &EigenvaluePair) -> Option<SpectralBlock> {
    let big = (p.a.abs() + p.b.abs()).max(p.beta);
    if big == 0.0 {
        return None;
    }
    let k = -(floor_log2(big) + 1);
    let sp = SpectralBlock::from_pair(p);
    Some(SpectralBlock { size: sp.size, beta: scale_pow2(sp.beta, k), a: scale_pow2(sp.a, k), b: scale_pow2(sp.b, k) })
}

/// Everything the tile tasks read: the (possibly scaled) pencil, working
/// eigenvalue pairs and tile norms.
pub struct Prepared<'a> {
    pub pencil: Cow<'a, RealSchurPencil>,
    pub prescale: (i32, i32),
    /// Eigenvalues of the input pencil.
    pub eigs: Vec<EigenvaluePair>,
    pub work: Vec<Option<SpectralBlock>>,
    pub norms: TileNorms,
}

pub fn prepare<'a>(pencil: &'a RealSchurPencil, part: &TilePartition) -> Result<Prepared<'a>> {
    if part.m() != pencil.m() {
        return Err(Error::DimensionMismatch { expected: format!("partition of order {}", pencil.m()), got: part.m().to_string() });
    }
    let eigs = extract_eigenvalues(pencil)?;
    let (es, et) = prescale_exponents(pencil, part);
    let (scaled, work_eigs) = if es == 0 && et == 0 {
        (Cow::Borrowed(pencil), None)
    } else {
        let p = apply_prescale(pencil, es, et);
        let w = extract_eigenvalues(&p)?;
        (Cow::Owned(p), Some(w))
    };
    let work = work_eigs.as_ref().unwrap_or(&eigs).iter().map(working_pair).collect();
    let norms = compute_tile_norms(&scaled, part);
    Ok(Prepared { pencil: scaled, prescale: (es, et), eigs, work, norms })
}

impl Prepared<'_> {
    pub(crate) fn diag_tile<'b>(&'b self, part: &'b TilePartition, i: usize) -> DiagTile<'b> {
        let (o, w) = (part.tile_start(i), part.tile_size(i));
        DiagTile {
            s: self.pencil.s().view(o, o, w, w),
            t: self.pencil.t().view(o, o, w, w),
            micro: part.tile_blocks(i),
            col_norms: &self.norms.micro_cols[i],
        }
    }

    pub(crate) fn group_specs(&self, part: &TilePartition, g: usize) -> Vec<SpectralBlock> {
        part.groups()[g].members.iter().map(|&i| self.work[part.slots()[i].block].expect("indefinite blocks are not grouped")).collect()
    }

    /// Eigenvector tips of all members of group `g` in its diagonal tile.
    pub(crate) fn tip(&self, part: &TilePartition, g: usize, specs: &[SpectralBlock]) -> Result<(AugmentedMatrix, Vec<KernelFlags>)> {
        let group = &part.groups()[g];
        let r = group.tile_row;
        let tile = self.diag_tile(part, r);
        let rows = part.tile_size(r);
        let mut seg = AugmentedMatrix::zeros(rows, &part.group_widths(g));
        let mut flags = Vec::with_capacity(specs.len());
        for (j, (&slot, spec)) in group.members.iter().zip(specs).enumerate() {
            let (one, f) = compute_tip(&tile, spec, part.slots()[slot].position)?;
            let start = seg.block(j).start;
            seg.values_mut().as_mut_slice()[start * rows..(start + spec.size) * rows].copy_from_slice(one.values().as_slice());
            seg.set_scale(j, one.scale(0));
            seg.refresh_norm(j);
            flags.push(f);
        }
        Ok((seg, flags))
    }

    /// `Y_k <- Y_k - (S_{k,src} X D - T_{k,src} X B)`.
    pub(crate) fn update(&self, part: &TilePartition, specs: &[SpectralBlock], k: usize, src: usize, x: &AugmentedMatrix, y: &mut AugmentedMatrix) -> Result<Vec<KernelFlags>> {
        let (r0, rw) = (part.tile_start(k), part.tile_size(k));
        let (c0, cw) = (part.tile_start(src), part.tile_size(src));
        robust_tile_update(
            self.pencil.s().view(r0, c0, rw, cw),
            self.norms.s_norm(k, src),
            self.pencil.t().view(r0, c0, rw, cw),
            self.norms.t_norm(k, src),
            x,
            specs,
            y,
        )
    }

    pub(crate) fn solve(&self, part: &TilePartition, specs: &[SpectralBlock], i: usize, y: &mut AugmentedMatrix) -> Result<Vec<KernelFlags>> {
        solve_tile(&self.diag_tile(part, i), specs, y)
    }
}

/// One column block segment of an eigenvector: `rows × width` stored values
/// (column-major) representing `values * 2^(-scale)`.
#[derive(Clone, Copy, Debug)]
pub struct SegmentRef<'a> {
    pub values: &'a [f64],
    pub rows: usize,
    pub scale: ScalingExponent,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedColumn {
    /// `m × width`, column-major.
    pub values: Vec<f64>,
    pub exponent: ScalingExponent,
    pub underflow: bool,
}

/// Unifies the scalings of an eigenvector's segments (stacked top to bottom,
/// padded with zeros to `m` rows) at their minimum and normalizes: a real
/// vector to unit infinity norm, a complex pair `[x y]` by its largest
/// componentwise modulus `|x_i + i y_i|`.
pub fn normalize_column(segments: &[SegmentRef<'_>], width: usize, m: usize) -> Result<NormalizedColumn> {
    let exponent = crate::guard::consistent_scaling(&segments.iter().map(|s| s.scale).collect::<Vec<_>>())?;
    let mut values = vec![0.0; m * width];
    let mut underflow = false;
    let mut row = 0;
    for seg in segments {
        let shift = exponent.exponent() - seg.scale.exponent();
        for c in 0..width {
            let dst = &mut values[c * m + row..c * m + row + seg.rows];
            dst.copy_from_slice(&seg.values[c * seg.rows..(c + 1) * seg.rows]);
            underflow |= scale_slice(dst, shift);
        }
        row += seg.rows;
    }
    let nrm = if width == 1 {
        values.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    } else {
        let (x, y) = values.split_at(m);
        x.iter().zip(y).fold(0.0f64, |a, (x, y)| a.max(x.hypot(*y)))
    };
    if nrm == 0.0 {
        return Err(Error::ZeroColumn { column: 0 });
    }
    for v in values.iter_mut() {
        *v /= nrm;
    }
    Ok(NormalizedColumn { values, exponent, underflow })
}

/// Normalized columns of a column group plus their flags, or the error that
/// cancelled the group.
pub(crate) struct GroupOutput {
    pub columns: Vec<(usize, Result<NormalizedColumn>, KernelFlags)>,
}

pub(crate) fn post_process(part: &TilePartition, g: usize, segs: &[AugmentedMatrix], flags: &[KernelFlags]) -> GroupOutput {
    let group = &part.groups()[g];
    let m = part.m();
    let columns = group
        .members
        .iter()
        .enumerate()
        .map(|(j, &slot)| {
            let refs: Vec<SegmentRef<'_>> = segs
                .iter()
                .map(|s| {
                    let b = s.block(j);
                    let rows = s.rows();
                    SegmentRef { values: &s.values().as_slice()[b.start * rows..(b.start + b.width) * rows], rows, scale: b.scale }
                })
                .collect();
            (slot, normalize_column(&refs, part.slots()[slot].width, m), flags[j])
        })
        .collect();
    GroupOutput { columns }
}

/// Runs column group `g` tile by tile: tip, then for each tile row above,
/// all updates from the row below followed by the solve.
pub(crate) fn solve_group(prep: &Prepared<'_>, part: &TilePartition, g: usize) -> Result<GroupOutput> {
    let specs = prep.group_specs(part, g);
    let widths = part.group_widths(g);
    let r = part.groups()[g].tile_row;
    let mut segs: Vec<AugmentedMatrix> = (0..r).map(|k| AugmentedMatrix::zeros(part.tile_size(k), &widths)).collect();
    let (tip, mut flags) = prep.tip(part, g, &specs)?;
    segs.push(tip);
    for i in (0..r).rev() {
        let (lo, hi) = segs.split_at_mut(i + 1);
        for (k, y) in lo.iter_mut().enumerate() {
            merge(&mut flags, prep.update(part, &specs, k, i + 1, &hi[0], y)?);
        }
        merge(&mut flags, prep.solve(part, &specs, i, &mut lo[i])?);
    }
    Ok(post_process(part, g, &segs, &flags))
}

/// Assembles group outputs into the eigenvector matrix.
pub(crate) fn assemble(prep: &Prepared<'_>, part: &TilePartition, outputs: Vec<(usize, Result<GroupOutput>)>) -> EigenvectorResult {
    let m = part.m();
    let mut vectors = Matrix::zeros(m, part.num_columns());
    let mut columns: Vec<ColumnInfo> = part.slots().iter().map(|s| blank_info(prep, s)).collect();
    for (g, out) in outputs {
        match out {
            Ok(out) => {
                for (slot, col, flags) in out.columns {
                    let info = &mut columns[slot];
                    info.perturbed = flags.perturbed;
                    info.underflow = flags.underflow;
                    match col {
                        Ok(c) => {
                            info.exponent = c.exponent.exponent();
                            info.underflow |= c.underflow;
                            let s = part.slots()[slot];
                            vectors.as_mut_slice()[s.col * m..(s.col + s.width) * m].copy_from_slice(&c.values);
                        }
                        Err(_) => info.error = Some(Error::ZeroColumn { column: info.col }.to_string()),
                    }
                }
            }
            Err(e) => {
                for &slot in &part.groups()[g].members {
                    columns[slot].error = Some(e.to_string());
                }
            }
        }
    }
    EigenvectorResult { vectors, columns, prescale: prep.prescale }
}

fn blank_info(prep: &Prepared<'_>, s: &ColumnSlot) -> ColumnInfo {
    ColumnInfo {
        block: s.block,
        col: s.col,
        width: s.width,
        eigenvalue: prep.eigs[s.block],
        exponent: 0,
        perturbed: false,
        underflow: false,
        indefinite: s.indefinite,
        error: None,
    }
}

/// Single-threaded blocked solve over all column groups of `part`.
pub fn solve_sequential(pencil: &RealSchurPencil, part: &TilePartition) -> Result<EigenvectorResult> {
    let prep = prepare(pencil, part)?;
    let outputs = (0..part.groups().len()).map(|g| (g, solve_group(&prep, part, g))).collect();
    Ok(assemble(&prep, part, outputs))
}
