//! Matrix Market array files, pencil directories and result files.
//!
//! Floats are written in the shortest form that parses back to the same
//! bits (`{:e}`), so files round-trip exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::blocked::{ColumnInfo, EigenvectorResult};
use crate::error::{Error, Result};
use crate::generate::{GeneratedPencil, GeneratorConfig, Planted};
use crate::matrix::Matrix;
use crate::pencil::{DiagBlock, EigenvaluePair, RealSchurPencil};

pub const FORMAT_VERSION: u32 = 1;

pub const S_FILE: &str = "S.mtx";
pub const T_FILE: &str = "T.mtx";
pub const META_FILE: &str = "meta.json";
pub const V_FILE: &str = "V.mtx";
pub const EIGVALS_FILE: &str = "eigvals.json";

/// Serializes a dense matrix in Matrix Market array format (column-major).
pub fn format_matrix_market(a: &Matrix) -> String {
    let mut out = String::with_capacity(a.rows() * a.cols() * 24 + 64);
    out.push_str("%%MatrixMarket matrix array real general\n");
    let _ = writeln!(out, "{} {}", a.rows(), a.cols());
    for v in a.as_slice() {
        let _ = writeln!(out, "{v:e}");
    }
    out
}

pub fn parse_matrix_market(text: &str) -> Result<Matrix> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty Matrix Market file".into()))?;
    let h: Vec<String> = header.split_whitespace().map(|w| w.to_ascii_lowercase()).collect();
    if h.len() < 5 || h[0] != "%%matrixmarket" || h[1] != "matrix" || h[2] != "array" || h[3] != "real" || h[4] != "general" {
        return Err(Error::Parse(format!("unsupported Matrix Market header {header:?}")));
    }
    let mut body = lines.map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('%'));
    let dims = body.next().ok_or_else(|| Error::Parse("missing size line".into()))?;
    let dims: Vec<usize> = dims.split_whitespace().map(|w| w.parse().map_err(|_| Error::Parse(format!("bad size line {dims:?}")))).collect::<Result<_>>()?;
    if dims.len() != 2 {
        return Err(Error::Parse("size line must hold two integers".into()));
    }
    let (rows, cols) = (dims[0], dims[1]);
    let mut data = Vec::with_capacity(rows * cols);
    for line in body {
        let v: f64 = line.parse().map_err(|_| Error::Parse(format!("bad value {line:?}")))?;
        data.push(v);
    }
    if data.len() != rows * cols {
        return Err(Error::Parse(format!("expected {} values, found {}", rows * cols, data.len())));
    }
    Ok(Matrix::from_col_major(rows, cols, data))
}

fn file_error(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::File { path: path.display().to_string(), source }
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(file_error(path))
}

pub(crate) fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(file_error(path))
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(file_error(path))
}

pub fn write_matrix(path: &Path, a: &Matrix) -> Result<()> {
    write_file(path, &format_matrix_market(a))
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    parse_matrix_market(&read_file(path)?).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Sidecar describing a pencil directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PencilMeta {
    pub format_version: u32,
    pub m: usize,
    pub blocks: Vec<DiagBlock>,
    #[serde(default)]
    pub generator: Option<GeneratorConfig>,
    #[serde(default)]
    pub planted: Option<Planted>,
}

pub fn write_pencil(dir: &Path, pencil: &RealSchurPencil, generator: Option<&GeneratedPencil>) -> Result<()> {
    create_dir(dir)?;
    write_matrix(&dir.join(S_FILE), pencil.s())?;
    write_matrix(&dir.join(T_FILE), pencil.t())?;
    let meta = PencilMeta {
        format_version: FORMAT_VERSION,
        m: pencil.m(),
        blocks: pencil.blocks().to_vec(),
        generator: generator.map(|g| g.config.clone()),
        planted: generator.map(|g| g.planted),
    };
    write_file(&dir.join(META_FILE), &serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

/// Reads `S.mtx`, `T.mtx` and, when present, the sidecar's declared block structure.
pub fn read_pencil(dir: &Path) -> Result<(RealSchurPencil, Option<PencilMeta>)> {
    let s = read_matrix(&dir.join(S_FILE))?;
    let t = read_matrix(&dir.join(T_FILE))?;
    let meta_path = dir.join(META_FILE);
    if meta_path.exists() {
        let meta: PencilMeta = serde_json::from_str(&read_file(&meta_path)?)?;
        if meta.format_version != FORMAT_VERSION {
            return Err(Error::Parse(format!("unsupported format version {}", meta.format_version)));
        }
        let pencil = RealSchurPencil::with_blocks(s, t, meta.blocks.clone())?;
        Ok((pencil, Some(meta)))
    } else {
        Ok((RealSchurPencil::validate(s, t)?, None))
    }
}

/// Eigenvalue entry of `eigvals.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigvalEntry {
    pub block: usize,
    pub col: usize,
    pub width: usize,
    pub a: f64,
    pub b: f64,
    pub beta: f64,
}

impl EigvalEntry {
    pub fn pair(&self) -> EigenvaluePair {
        EigenvaluePair { a: self.a, b: self.b, beta: self.beta, block_index: self.block, block_size: self.width }
    }
}

pub fn eigval_entries(columns: &[ColumnInfo]) -> Vec<EigvalEntry> {
    columns
        .iter()
        .map(|c| EigvalEntry { block: c.block, col: c.col, width: c.width, a: c.eigenvalue.a, b: c.eigenvalue.b, beta: c.eigenvalue.beta })
        .collect()
}

/// Writes `V.mtx` and `eigvals.json`.
pub fn write_result(dir: &Path, result: &EigenvectorResult) -> Result<()> {
    create_dir(dir)?;
    write_matrix(&dir.join(V_FILE), &result.vectors)?;
    write_file(&dir.join(EIGVALS_FILE), &serde_json::to_string_pretty(&eigval_entries(&result.columns))?)?;
    Ok(())
}

pub fn read_result(dir: &Path) -> Result<(Matrix, Vec<EigvalEntry>)> {
    let v = read_matrix(&dir.join(V_FILE))?;
    let e: Vec<EigvalEntry> = serde_json::from_str(&read_file(&dir.join(EIGVALS_FILE))?)?;
    Ok((v, e))
}
