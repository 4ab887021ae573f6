//! `CKP1` model checkpoints.
//!
//! ```text
//! magic        4 bytes  "CKP1"
//! version      u32 LE   currently 1
//! header_len   u64 LE
//! header       header_len bytes of UTF-8 JSON:
//!              {model, train, max_title_len, chars, params: [{name, shape}]}
//! payload_len  u64 LE   8 × total parameter count
//! payload      f64 LE values, parameters in header order, row-major
//! digest       32 bytes SHA-256 of every preceding byte
//! ```
//!
//! Parameters are stored at full `f64` precision so that a reload is
//! bit-identical. `max_title_len` in the checkpoint is authoritative: an
//! evaluation corpus never changes `K`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{FormatError, Reader};
use crate::embeddings::CharVocab;
use crate::model::{HybridModel, ModelConfig};
use crate::params::zero_init;
use crate::training::TrainConfig;
use crate::Result;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CKP1";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train: TrainConfig,
    max_title_len: usize,
    chars: String,
    params: Vec<ParamMeta>,
}

#[derive(Serialize, Deserialize, PartialEq)]
struct ParamMeta {
    name: String,
    shape: Vec<usize>,
}

/// A restored model and the configuration it was trained with.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: HybridModel,
    pub train: TrainConfig,
}

pub fn encode_checkpoint(model: &HybridModel, train: &TrainConfig) -> Result<Vec<u8>> {
    let params = model.params();
    if let Some(id) = params.ids().find(|&id| !params.get(id).is_finite()) {
        return Err(FormatError::NonFinite(params.name(id).to_owned()).into());
    }
    let header = Header {
        model: model.config().clone(),
        train: train.clone(),
        max_title_len: model.max_title_len(),
        chars: model.char_cnn().vocab().to_text(),
        params: params
            .ids()
            .map(|id| ParamMeta {
                name: params.name(id).to_owned(),
                shape: params.get(id).shape().to_vec(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header).map_err(|e| FormatError::Header(e.to_string()))?;
    let payload_len = 8 * params.numel();

    let mut out = Vec::with_capacity(4 + 4 + 8 + header.len() + 8 + payload_len + DIGEST_LEN);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(payload_len as u64).to_le_bytes());
    for id in params.ids() {
        for v in params.get(id).data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4).unwrap_or(bytes);
    if magic != CHECKPOINT_MAGIC {
        return Err(FormatError::BadMagic {
            expected: "CKP1".into(),
            found: magic.to_vec(),
        }
        .into());
    }
    let version = r.u32().ok_or(FormatError::TruncatedHeader)?;
    if version != CHECKPOINT_VERSION {
        return Err(FormatError::UnsupportedVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        }
        .into());
    }
    let header_len = r.u64().ok_or(FormatError::TruncatedHeader)?;
    let header_bytes = usize::try_from(header_len)
        .ok()
        .and_then(|n| r.take(n))
        .ok_or(FormatError::TruncatedHeader)?;
    let payload_len = r.u64().ok_or(FormatError::TruncatedHeader)?;
    let payload = usize::try_from(payload_len)
        .ok()
        .and_then(|n| r.take(n))
        .ok_or(FormatError::Truncated { index: 0 })?;
    let body_end = r.pos;
    let digest = r
        .take(DIGEST_LEN)
        .ok_or(FormatError::Truncated { index: 0 })?;
    if r.remaining() > 0 {
        return Err(FormatError::TrailingBytes {
            count: r.remaining(),
        }
        .into());
    }
    if Sha256::digest(&bytes[..body_end]).as_slice() != digest {
        return Err(FormatError::ChecksumMismatch.into());
    }

    let header: Header =
        serde_json::from_slice(header_bytes).map_err(|e| FormatError::Header(e.to_string()))?;
    let vocab = CharVocab::from_chars(header.chars.chars());
    let mut model = HybridModel::new(header.model, vocab, header.max_title_len, &mut zero_init)?;

    let params = model.params_mut();
    let layout: Vec<ParamMeta> = params
        .ids()
        .map(|id| ParamMeta {
            name: params.name(id).to_owned(),
            shape: params.get(id).shape().to_vec(),
        })
        .collect();
    if layout != header.params {
        return Err(FormatError::ParamMismatch("parameter names or shapes differ".into()).into());
    }
    if payload.len() != 8 * params.numel() {
        return Err(FormatError::ParamMismatch(format!(
            "payload holds {} bytes, model needs {}",
            payload.len(),
            8 * params.numel()
        ))
        .into());
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        for slot in params.get_mut(id).data_mut() {
            *slot = values.next().expect("length checked");
        }
    }
    Ok(Checkpoint {
        model,
        train: header.train,
    })
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &HybridModel,
    train: &TrainConfig,
) -> Result<()> {
    Ok(fs::write(path, encode_checkpoint(model, train)?)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}
