//! Binary model container.
//!
//! Layout: the 8-byte magic `P2CMODEL`, a little-endian `u32` format version, a
//! little-endian `u64` header length, a JSON header (config, granularity,
//! vocabularies, parameter names and shapes), then every parameter's values as
//! little-endian `f64` in header order. Writing is deterministic, so a loaded model
//! saves back to identical bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, P2CModel};
use crate::corpus::{Granularity, Vocab};

pub const MAGIC: &[u8; 8] = b"P2CMODEL";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    granularity: Granularity,
    pinyin_vocab: Vocab,
    target_vocab: Vocab,
    params: Vec<ParamEntry>,
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

pub fn to_bytes(model: &P2CModel) -> Vec<u8> {
    let header = Header {
        config: model.config.clone(),
        granularity: model.granularity,
        pinyin_vocab: model.pinyin_vocab.clone(),
        target_vocab: model.target_vocab.clone(),
        params: model
            .params
            .iter()
            .map(|p| ParamEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(20 + json.len() + 8 * model.params.scalar_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in model.params.iter() {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<P2CModel, ModelError> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a model file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = bytes
        .get(20..20usize.saturating_add(header_len))
        .ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| bad(format!("header: {e}")))?;

    let mut model = P2CModel::build(&header.config, header.pinyin_vocab, header.target_vocab, None)?;
    model.granularity = header.granularity;
    if model.params.len() != header.params.len() {
        return Err(bad(format!(
            "expected {} parameters for this config, file has {}",
            model.params.len(),
            header.params.len()
        )));
    }
    let mut offset = 20 + header_len;
    for (p, entry) in model.params.iter_mut().zip(&header.params) {
        if p.name != entry.name || p.value.shape() != entry.shape.as_slice() {
            return Err(bad(format!(
                "parameter {} {:?} does not match file entry {} {:?}",
                p.name,
                p.value.shape(),
                entry.name,
                entry.shape
            )));
        }
        let n = p.value.len();
        let raw = bytes
            .get(offset..offset + 8 * n)
            .ok_or_else(|| bad(format!("truncated values for {}", p.name)))?;
        for (dst, chunk) in p.value.data_mut().iter_mut().zip(raw.chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        offset += 8 * n;
    }
    if offset != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - offset)));
    }
    Ok(model)
}

/// Writes through a temporary file so an interrupted save never clobbers a good file.
pub fn save(model: &P2CModel, path: &Path) -> Result<(), ModelError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&to_bytes(model))?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<P2CModel, ModelError> {
    from_bytes(&fs::read(path)?)
}
