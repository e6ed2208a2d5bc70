//! Single-file parameter archive.
//!
//! Layout: the magic bytes, a little-endian `u64` manifest length, the JSON
//! manifest, then one entry per tensor: `u32` name length, UTF-8 name,
//! `u8` dtype code (1 = f64), `u32` rank, `u64` dims, then the values as
//! little-endian f64.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Rng, Tensor};

use super::{ModelConfig, Transformer};

const MAGIC: &[u8; 8] = b"TTXCKPT1";
const DTYPE_F64: u8 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub fingerprint: String,
    pub config: ModelConfig,
    pub step: u64,
    /// Free-form run state (examples consumed, optimizer counters, ...).
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub entries: Vec<(String, Tensor)>,
}

impl Checkpoint {
    /// Snapshot of a model's parameters, in store order.
    pub fn from_model(model: &Transformer, step: u64) -> Self {
        let cfg = model.config().clone();
        Checkpoint {
            manifest: Manifest {
                fingerprint: cfg.fingerprint(),
                config: cfg,
                step,
                meta: serde_json::Value::Null,
            },
            entries: model
                .store()
                .iter()
                .map(|(_, name, t)| (name.to_string(), t.clone()))
                .collect(),
        }
    }

    pub fn step(&self) -> u64 {
        self.manifest.step
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Rebuilds the model, checking the stored fingerprint.
    pub fn to_model(&self) -> Result<Transformer> {
        let cfg = &self.manifest.config;
        if cfg.fingerprint() != self.manifest.fingerprint {
            return Err(Error::Format("checkpoint fingerprint does not match its config".into()));
        }
        let mut model = Transformer::new(cfg.clone(), &mut Rng::new(0, 0))?;
        let mut store = ParamStore::new();
        for (name, t) in &self.entries {
            if model.store().id(name).is_some() {
                store.add(name.clone(), t.clone())?;
            }
        }
        model.load_values(&store)?;
        Ok(model)
    }

    /// Like [`Checkpoint::to_model`] but refuses a checkpoint made for a
    /// different configuration.
    pub fn to_model_for(&self, expected: &ModelConfig) -> Result<Transformer> {
        if expected.fingerprint() != self.manifest.fingerprint {
            return Err(Error::Config(format!(
                "checkpoint fingerprint {} does not match config {}",
                self.manifest.fingerprint,
                expected.fingerprint()
            )));
        }
        self.to_model()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = serde_json::to_vec(&self.manifest).expect("manifest serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F64);
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for d in t.shape() {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let len = r.u64()? as usize;
        let manifest: Manifest = serde_json::from_slice(r.take(len)?)
            .map_err(|e| Error::Format(format!("bad checkpoint manifest: {e}")))?;
        let mut entries = Vec::new();
        while r.at < bytes.len() {
            let n = r.u32()? as usize;
            let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| Error::Format("entry name is not UTF-8".into()))?;
            if r.take(1)?[0] != DTYPE_F64 {
                return Err(Error::Format(format!("entry {name} has an unsupported dtype")));
            }
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let count: usize = shape.iter().product();
            let raw = r.take(count.checked_mul(8).ok_or_else(|| Error::Format("entry too large".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            entries.push((name, Tensor::new(shape, data)?));
        }
        Ok(Checkpoint { manifest, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
