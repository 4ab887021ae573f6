//! `EMB1` / `FTB1` vector files.
//!
//! ```text
//! magic      4 bytes   "EMB1" (embedding table) or "FTB1" (feature bank)
//! dim        u32 LE
//! count      u32 LE
//! count × {
//!   len      u32 LE    byte length of the key
//!   key      len bytes UTF-8
//!   vector   dim × f32 LE
//! }
//! ```
//!
//! Nothing may follow the last entry.

use std::fs;
use std::path::Path;

use super::{FormatError, PostRecord, Reader};
use crate::embeddings::EmbeddingTable;
use crate::Result;

pub const EMBEDDING_MAGIC: &[u8; 4] = b"EMB1";
pub const FEATURE_MAGIC: &[u8; 4] = b"FTB1";

/// Id-keyed fixed-width feature vectors (image FC7 activations or document
/// vectors).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBank(EmbeddingTable);

impl FeatureBank {
    pub fn new(dim: usize) -> Self {
        Self(EmbeddingTable::new(dim))
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: Vec<f32>) -> Result<()> {
        self.0.insert(id, vector)
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.0.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.0.iter()
    }

    pub fn as_table(&self) -> &EmbeddingTable {
        &self.0
    }

    /// Image ids referenced by `records` but absent from the bank, each
    /// listed once in order of first reference.
    pub fn missing_ids(&self, records: &[PostRecord]) -> Vec<String> {
        let mut seen = std::collections::HashSet::new();
        records
            .iter()
            .filter_map(|r| r.image_id.as_deref())
            .filter(|id| self.get(id).is_none() && seen.insert(*id))
            .map(str::to_owned)
            .collect()
    }
}

pub fn encode_vectors(magic: &[u8; 4], table: &EmbeddingTable) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + table.len() * (8 + 4 * table.dim()));
    out.extend_from_slice(magic);
    out.extend_from_slice(&(table.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(table.len() as u32).to_le_bytes());
    for (token, vector) in table.iter() {
        out.extend_from_slice(&(token.len() as u32).to_le_bytes());
        out.extend_from_slice(token.as_bytes());
        for v in vector {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_vectors(magic: &[u8; 4], bytes: &[u8]) -> Result<EmbeddingTable, FormatError> {
    let mut r = Reader::new(bytes);
    let found = r.take(4).unwrap_or(bytes);
    if found != magic {
        return Err(FormatError::BadMagic {
            expected: String::from_utf8_lossy(magic).into_owned(),
            found: found.to_vec(),
        });
    }
    let dim = r.u32().ok_or(FormatError::TruncatedHeader)? as usize;
    let count = r.u32().ok_or(FormatError::TruncatedHeader)? as usize;
    let mut table = EmbeddingTable::new(dim);
    for index in 0..count {
        let truncated = FormatError::Truncated { index };
        let len = r.u32().ok_or(truncated.clone())? as usize;
        let key = r.take(len).ok_or(truncated.clone())?;
        let key = std::str::from_utf8(key).map_err(|_| FormatError::InvalidUtf8 { index })?;
        let raw = r
            .take(dim.checked_mul(4).ok_or(truncated.clone())?)
            .ok_or(truncated)?;
        let vector = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        table
            .insert(key, vector)
            .map_err(|_| FormatError::DuplicateToken {
                index,
                token: key.to_owned(),
            })?;
    }
    if r.remaining() > 0 {
        return Err(FormatError::TrailingBytes {
            count: r.remaining(),
        });
    }
    Ok(table)
}

pub fn read_embedding_file(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    Ok(decode_vectors(EMBEDDING_MAGIC, &fs::read(path)?)?)
}

pub fn write_embedding_file(path: impl AsRef<Path>, table: &EmbeddingTable) -> Result<()> {
    Ok(fs::write(path, encode_vectors(EMBEDDING_MAGIC, table))?)
}

pub fn read_feature_bank(path: impl AsRef<Path>) -> Result<FeatureBank> {
    Ok(FeatureBank(decode_vectors(
        FEATURE_MAGIC,
        &fs::read(path)?,
    )?))
}

pub fn write_feature_bank(path: impl AsRef<Path>, bank: &FeatureBank) -> Result<()> {
    Ok(fs::write(path, encode_vectors(FEATURE_MAGIC, &bank.0))?)
}
