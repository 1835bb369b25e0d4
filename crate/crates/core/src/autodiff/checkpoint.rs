//! Flat tensor archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"DRCK" | u32 version | u64 manifest_len | manifest JSON | payload
//! ```
//!
//! The manifest lists every tensor's name, shape and byte offset into the
//! payload, plus free-form metadata. Payloads are 32-bit floats.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DRCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
    pub meta: serde_json::Value,
}

fn fmt_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(format!("checkpoint: {}", msg.into())))
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value) -> Self {
        Self {
            tensors: Vec::new(),
            meta,
        }
    }

    pub fn push(&mut self, name: &str, t: &Tensor) {
        self.tensors.push((
            name.to_string(),
            t.shape().to_vec(),
            t.data().iter().map(|&v| v as f32).collect(),
        ));
    }

    /// Every parameter value, in store order.
    pub fn push_params(&mut self, store: &ParamStore) {
        for (_, p) in store.iter() {
            self.push(&p.name, p.value());
        }
    }

    pub fn get(&self, name: &str) -> Option<Tensor> {
        self.tensors
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, s, d)| {
                Tensor::new(s.clone(), d.iter().map(|&v| f64::from(v)).collect())
                    .expect("validated on read")
            })
    }

    /// Copies every store parameter from the archive; names and shapes must
    /// match exactly.
    pub fn load_params(&self, store: &mut ParamStore) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = store.name(id).to_string();
            let Some(t) = self.get(&name) else {
                return Err(Error::Param(format!("checkpoint has no tensor `{name}`")));
            };
            store.set_value(id, t)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0;
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, shape, data) in &self.tensors {
            if shape.iter().product::<usize>() != data.len() {
                return fmt_err(format!("`{name}` shape {shape:?} vs {} values", data.len()));
            }
            entries.push(TensorEntry {
                name: name.clone(),
                shape: shape.clone(),
                offset,
            });
            offset += data.len() * 4;
        }
        let manifest = serde_json::to_vec(&Manifest {
            format_version: CHECKPOINT_VERSION,
            tensors: entries,
            meta: self.meta.clone(),
        })?;
        let mut out = Vec::with_capacity(16 + manifest.len() + offset);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for (_, _, data) in &self.tensors {
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
            return fmt_err("bad magic");
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return fmt_err(format!("unsupported version {version}"));
        }
        let mlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let Some(mbytes) = bytes.get(16..16 + mlen) else {
            return fmt_err("truncated manifest");
        };
        let manifest: Manifest = serde_json::from_slice(mbytes)?;
        if manifest.format_version != version {
            return fmt_err("manifest version differs from header");
        }
        let payload = &bytes[16 + mlen..];
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        let mut expected = 0;
        for e in manifest.tensors {
            let n: usize = e.shape.iter().product();
            if e.offset != expected {
                return fmt_err(format!(
                    "`{}` offset {} (expected {expected})",
                    e.name, e.offset
                ));
            }
            let Some(raw) = payload.get(e.offset..e.offset + 4 * n) else {
                return fmt_err(format!("truncated payload for `{}`", e.name));
            };
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            expected += 4 * n;
            tensors.push((e.name, e.shape, data));
        }
        if expected != payload.len() {
            return fmt_err("trailing bytes after payload");
        }
        Ok(Self {
            tensors,
            meta: manifest.meta,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes()?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
