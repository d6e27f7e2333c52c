//! Conformal tiling of `S`, `T` and the eigenvector matrix.

use crate::error::{Error, Result};
use crate::pencil::{DiagBlock, RealSchurPencil, Selection};

/// One selected eigenvalue block and where its columns live.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ColumnSlot {
    /// Index of the diagonal block of `S`.
    pub block: usize,
    /// First column in the result matrix.
    pub col: usize,
    /// 1 for a real eigenvector, 2 for a complex pair `[x y]`.
    pub width: usize,
    /// Tile row holding the block.
    pub tile: usize,
    /// Position of the block among the micro blocks of its tile.
    pub position: usize,
    /// Both `S_jj` and `T_jj` vanish: no eigenvector is computed.
    pub indefinite: bool,
}

/// Column group: eigenvectors whose blocks share a diagonal tile, solved together.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColumnGroup {
    pub tile_row: usize,
    /// Indices into [`TilePartition::slots`].
    pub members: Vec<usize>,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TilePartition {
    m: usize,
    mb: usize,
    nb: usize,
    bounds: Vec<usize>,
    tile_blocks: Vec<Vec<DiagBlock>>,
    block_tile: Vec<(usize, usize)>,
    slots: Vec<ColumnSlot>,
    groups: Vec<ColumnGroup>,
    n_cols: usize,
}

/// Default tile size: 1.6 % of `m` with a floor of 32 for `m >= 1000`, otherwise a single tile.
pub fn default_tile_size(m: usize) -> usize {
    if m >= 1000 {
        ((0.016 * m as f64).round() as usize).max(32)
    } else {
        m.max(2)
    }
}

/// Tile boundaries every `mb` rows, shifted down by one where they would split a 2×2 block.
fn tile_bounds(pencil: &RealSchurPencil, mb: usize) -> Vec<usize> {
    let m = pencil.m();
    let mut starts_pair = vec![false; m + 1];
    for b in pencil.blocks() {
        if b.size == 2 {
            starts_pair[b.start] = true;
        }
    }
    let mut bounds = vec![0];
    let mut nominal = mb;
    while nominal < m {
        let mut b = nominal;
        if b >= 1 && starts_pair[b - 1] {
            b += 1;
        }
        if b < m && b > *bounds.last().unwrap() {
            bounds.push(b);
        }
        nominal += mb;
    }
    bounds.push(m);
    bounds
}

/// Partitions the pencil into tiles and the selected eigenvectors into column groups.
pub fn make_partition(pencil: &RealSchurPencil, sel: &Selection, mb_hint: Option<usize>, nb_hint: Option<usize>) -> Result<TilePartition> {
    let m = pencil.m();
    if sel.len() != pencil.num_blocks() {
        return Err(Error::DimensionMismatch { expected: format!("selection over {} blocks", pencil.num_blocks()), got: sel.len().to_string() });
    }
    if sel.is_empty() {
        return Err(Error::EmptySelection);
    }
    let mb = mb_hint.unwrap_or_else(|| default_tile_size(m));
    let nb = nb_hint.unwrap_or(mb);
    if mb < 2 || nb < 2 {
        return Err(Error::InvalidHint { mb, nb });
    }
    let bounds = tile_bounds(pencil, mb);
    let nt = bounds.len() - 1;

    let mut tile_blocks = vec![Vec::new(); nt];
    let mut block_tile = Vec::with_capacity(pencil.num_blocks());
    let mut tile = 0;
    for b in pencil.blocks() {
        while b.start >= bounds[tile + 1] {
            tile += 1;
        }
        debug_assert!(b.end() <= bounds[tile + 1]);
        block_tile.push((tile, tile_blocks[tile].len()));
        tile_blocks[tile].push(DiagBlock { start: b.start - bounds[tile], size: b.size });
    }

    let s = pencil.s();
    let t = pencil.t();
    let mut slots = Vec::new();
    let mut col = 0;
    for k in sel.selected() {
        let b = pencil.blocks()[k];
        let (tile, position) = block_tile[k];
        let indefinite = b.size == 1 && s[(b.start, b.start)] == 0.0 && t[(b.start, b.start)] == 0.0;
        slots.push(ColumnSlot { block: k, col, width: b.size, tile, position, indefinite });
        col += b.size;
    }

    let mut groups: Vec<ColumnGroup> = Vec::new();
    for (idx, slot) in slots.iter().enumerate() {
        if slot.indefinite {
            continue;
        }
        match groups.last_mut() {
            Some(g) if g.tile_row == slot.tile && g.width + slot.width <= nb => {
                g.members.push(idx);
                g.width += slot.width;
            }
            _ => groups.push(ColumnGroup { tile_row: slot.tile, members: vec![idx], width: slot.width }),
        }
    }

    Ok(TilePartition { m, mb, nb, bounds, tile_blocks, block_tile, slots, groups, n_cols: col })
}

impl TilePartition {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn mb(&self) -> usize {
        self.mb
    }

    pub fn nb(&self) -> usize {
        self.nb
    }

    pub fn num_tiles(&self) -> usize {
        self.bounds.len() - 1
    }

    /// Row boundaries `0 = b_0 < b_1 < ... < b_M = m`.
    pub fn bounds(&self) -> &[usize] {
        &self.bounds
    }

    pub fn tile_start(&self, i: usize) -> usize {
        self.bounds[i]
    }

    pub fn tile_size(&self, i: usize) -> usize {
        self.bounds[i + 1] - self.bounds[i]
    }

    /// Micro blocks of diagonal tile `i`, with offsets local to the tile.
    pub fn tile_blocks(&self, i: usize) -> &[DiagBlock] {
        &self.tile_blocks[i]
    }

    /// `(tile, position)` of pencil block `k`.
    pub fn block_location(&self, k: usize) -> (usize, usize) {
        self.block_tile[k]
    }

    pub fn slots(&self) -> &[ColumnSlot] {
        &self.slots
    }

    pub fn groups(&self) -> &[ColumnGroup] {
        &self.groups
    }

    /// Number of columns of the eigenvector matrix.
    pub fn num_columns(&self) -> usize {
        self.n_cols
    }

    /// Widths of the member column blocks of group `g`.
    pub fn group_widths(&self, g: usize) -> Vec<usize> {
        self.groups[g].members.iter().map(|&i| self.slots[i].width).collect()
    }
}
