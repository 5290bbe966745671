//! Binary parameter container: magic, version, JSON header, raw f64 tensors.
//!
//! Layout: `RLCK` · u32 version · u64 header length · header JSON ·
//! every tensor's values as little-endian f64 in header order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelSpec};
use crate::error::{Error, Result};
use crate::nn::{Module, ParamKind};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"RLCK";
const VERSION: u32 = 1;

/// Training provenance stored next to the parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config_digest: String,
    pub best_val_accuracy: Option<f64>,
    pub best_epoch: Option<usize>,
    /// Min-max input scaling `[lo, hi]` fitted on the training split.
    pub input_range: Option<[f64; 2]>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    kind: ParamKind,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    seed: u64,
    meta: CheckpointMeta,
    tensors: Vec<Entry>,
}

pub fn write_checkpoint(path: &Path, model: &Model, meta: &CheckpointMeta) -> Result<()> {
    let params = model.params();
    let header = Header {
        spec: model.spec().clone(),
        seed: model.seed(),
        meta: meta.clone(),
        tensors: params
            .iter()
            .map(|p| Entry { name: p.name.clone(), shape: p.shape.clone(), kind: p.kind })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(16 + json.len() + 8 * params.iter().map(|p| p.len()).sum::<usize>());
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for p in &params {
        for v in &p.value {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<(Model, CheckpointMeta)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Checkpoint(format!("{}: {m}", path.display()));
    if bytes.len() < 16 || bytes[..4] != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body)?;
    let mut model = Model::new(header.spec, header.seed)?;
    let mut offset = 16 + hlen;
    {
        let mut params = model.params_mut();
        if params.len() != header.tensors.len() {
            return Err(bad("tensor count does not match the model"));
        }
        for (p, e) in params.iter_mut().zip(&header.tensors) {
            if p.name != e.name || p.shape != e.shape {
                return Err(bad(&format!("tensor {} {:?} does not match model {} {:?}", e.name, e.shape, p.name, p.shape)));
            }
            let n = 8 * p.len();
            let raw = bytes.get(offset..offset + n).ok_or_else(|| bad("truncated tensor data"))?;
            for (v, c) in p.value.iter_mut().zip(raw.chunks_exact(8)) {
                *v = f64::from_le_bytes(c.try_into().expect("8 bytes"));
            }
            offset += n;
        }
    }
    if offset != bytes.len() {
        return Err(bad("trailing bytes after tensor data"));
    }
    Ok((model, header.meta))
}
