use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("S has a nonzero entry below its first subdiagonal at ({row}, {col})")]
    NotQuasiTriangular { row: usize, col: usize },

    #[error("T has a nonzero entry below its diagonal at ({row}, {col})")]
    NotTriangular { row: usize, col: usize },

    #[error("overlapping 2x2 blocks at rows {first} and {second}")]
    OverlappingBlocks { first: usize, second: usize },

    #[error("declared block structure is inconsistent with S at row {row}: {reason}")]
    BlockStructure { row: usize, reason: String },

    #[error("T has a negative diagonal entry at {index}")]
    NegativeDiagonal { index: usize },

    #[error("2x2 block {block} (rows {row}..{}) has real eigenvalues; 2x2 blocks must hold complex-conjugate pairs", row + 2)]
    RealEigenvaluesInBlock { block: usize, row: usize },

    #[error("selection splits the 2x2 block {block}")]
    SelectionSplitsBlock { block: usize },

    #[error("selection is empty")]
    EmptySelection,

    #[error("block index {block} is out of range (pencil has {count} blocks)")]
    BlockOutOfRange { block: usize, count: usize },

    #[error("tile size hints must be at least 2 (got mb={mb}, nb={nb})")]
    InvalidHint { mb: usize, nb: usize },

    #[error("protect_division called with a zero denominator")]
    ZeroDenominator,

    #[error("argument {value:e} exceeds the overflow threshold or is not finite")]
    ExceedsOverflow { value: f64 },

    #[error("rescale to exponent {target} would upscale a segment at exponent {current}")]
    Upscale { current: i32, target: i32 },

    #[error("no segments to unify")]
    EmptySegments,

    #[error("eigenvalue of block {block} is indefinite (alpha = beta = 0)")]
    Indefinite { block: usize },

    #[error("column {column} is zero and cannot be normalized")]
    ZeroColumn { column: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
