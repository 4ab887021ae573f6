use thiserror::Error;

use crate::io::FormatError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("duplicate token {0:?}")]
    DuplicateToken(String),
    #[error("cannot embed an empty token")]
    EmptyToken,
    #[error("{what}: expected dimension {expected}, got {actual}")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("attention over a fully masked sequence")]
    FullyMasked,
    #[error("mask of length {mask} does not match sequence of length {rows}")]
    MaskLength { mask: usize, rows: usize },
    #[error("label must be 0 or 1, got {0}")]
    InvalidLabel(f64),
    #[error("record {id} has no label")]
    MissingLabel { id: String },
    #[error("need at least {needed} records, got {found}")]
    TooFewRecords { needed: usize, found: usize },
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("length mismatch: {left} predictions vs {right} labels")]
    LengthMismatch { left: usize, right: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
