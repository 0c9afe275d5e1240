use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::posterior::{ParamSet, Tensor};

pub const CHECKPOINT_FORMAT: &str = "unside-ckpt-v1";

/// A serialised model: a model tag, free-form metadata (architecture,
/// schedule) and the named parameter tensors.
///
/// On disk: a little-endian `u64` header length, the JSON header, then every
/// tensor's data as little-endian `f64` in header order.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: String,
    pub meta: serde_json::Value,
    pub params: ParamSet,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    model: String,
    meta: serde_json::Value,
    tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            format: CHECKPOINT_FORMAT.to_string(),
            model: self.model.clone(),
            meta: self.meta.clone(),
            tensors: self.params.tensors().to_vec(),
        };
        let json = serde_json::to_vec(&header).map_err(|source| Error::Json {
            context: "checkpoint header".into(),
            source,
        })?;
        let mut out = Vec::with_capacity(8 + json.len() + 8 * self.params.num_scalars());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.params.tensors() {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Checkpoint(msg.to_string());
        if bytes.len() < 8 {
            return Err(bad("truncated header length"));
        }
        let len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
        let body = &bytes[8..];
        if body.len() < len {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..len]).map_err(|source| Error::Json {
            context: "checkpoint header".into(),
            source,
        })?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported format {:?}, expected {CHECKPOINT_FORMAT:?}",
                header.format
            )));
        }
        let mut data = &body[len..];
        let mut params = ParamSet::default();
        for t in header.tensors {
            let mut tensor = Tensor::zeros(t.name, &t.shape);
            let need = 8 * tensor.len();
            if data.len() < need {
                return Err(bad("truncated tensor data"));
            }
            for (v, chunk) in tensor.data.iter_mut().zip(data[..need].chunks_exact(8)) {
                *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            }
            data = &data[need..];
            params.push(tensor);
        }
        if !data.is_empty() {
            return Err(bad("trailing bytes after tensor data"));
        }
        Ok(Self {
            model: header.model,
            meta: header.meta,
            params,
        })
    }
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, ckpt.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
