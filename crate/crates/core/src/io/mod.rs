//! External file formats.
//!
//! * JSONL corpus using the Webis Clickbait-17 field names (see [`corpus`]).
//! * `EMB1` embedding tables and `FTB1` feature banks: little-endian binary
//!   files of id-keyed `f32` vectors (see [`vectors`]).
//! * `CKP1` model checkpoints with a SHA-256 trailer (see [`checkpoint`]).

pub mod checkpoint;
pub mod corpus;
pub mod vectors;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use corpus::{
    description_doc_id, parse_corpus, title_doc_id, Corpus, LineError, LineErrorKind, PostRecord,
};
pub use vectors::{
    read_embedding_file, read_feature_bank, write_embedding_file, write_feature_bank, FeatureBank,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: Vec<u8> },
    #[error("file ends inside the header")]
    TruncatedHeader,
    #[error("file ends inside entry {index}")]
    Truncated { index: usize },
    #[error("entry {index}: token is not valid UTF-8")]
    InvalidUtf8 { index: usize },
    #[error("entry {index}: duplicate token {token:?}")]
    DuplicateToken { index: usize, token: String },
    #[error("{count} unexpected bytes after the declared content")]
    TrailingBytes { count: usize },
    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("checksum mismatch: file is corrupted")]
    ChecksumMismatch,
    #[error("invalid header: {0}")]
    Header(String),
    #[error("parameter layout does not match the model: {0}")]
    ParamMismatch(String),
    #[error("refusing to write non-finite parameter {0}")]
    NonFinite(String),
}

/// Bounds-checked little-endian cursor over a byte buffer.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let out = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}
