//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "CSCP"  u32 version
//! u64 metadata length, UTF-8 JSON metadata
//! u32 tensor count
//! per tensor: u32 name length, UTF-8 name, u32 ndim, u64 dims..., f64 data...
//! ```
//!
//! Initialization weights are stored alongside the live ones under `init/`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::Params;
use super::Model;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::SeedBundle;

pub const MAGIC: &[u8; 4] = b"CSCP";
pub const VERSION: u32 = 1;
pub const INIT_PREFIX: &str = "init/";

/// Metadata document stored ahead of the tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub seeds: SeedBundle,
    /// Optimizer steps taken so far. Together with the seeds this fixes the
    /// position of every random stream.
    pub step: u64,
    pub epoch: usize,
}

/// A model together with its training position.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub seeds: SeedBundle,
    pub step: u64,
    pub epoch: usize,
}

impl Checkpoint {
    pub fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            config: self.model.config.clone(),
            seeds: self.seeds.clone(),
            step: self.step,
            epoch: self.epoch,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta()).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let init_count = self.model.init.as_ref().map_or(0, Params::len);
        let count = self.model.params.len() + init_count;
        let mut out = Vec::with_capacity(16 + meta.len() + 8 * self.model.params.count() * 2);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(count as u32).to_le_bytes());
        for (name, t) in self.model.params.iter() {
            write_tensor(&mut out, name, t);
        }
        if let Some(init) = &self.model.init {
            for (name, t) in init.iter() {
                write_tensor(&mut out, &format!("{}{}", INIT_PREFIX, name), t);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", version)));
        }
        let meta_len = r.u64()? as usize;
        let meta: CheckpointMeta =
            serde_json::from_slice(r.take(meta_len)?).map_err(|e| Error::Checkpoint(format!("metadata: {}", e)))?;
        meta.config.validate()?;
        let count = r.u32()?;
        let mut params = Params::new();
        let mut init = Params::new();
        for _ in 0..count {
            let (name, t) = r.tensor()?;
            let (target, local) = match name.strip_prefix(INIT_PREFIX) {
                Some(local) => (&mut init, local.to_string()),
                None => (&mut params, name),
            };
            if target.contains(&local) {
                return Err(Error::Checkpoint(format!("duplicate tensor `{}`", local)));
            }
            target.insert(local, t);
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let model = Model {
            config: meta.config,
            params,
            init: if init.is_empty() { None } else { Some(init) },
        };
        model.check()?;
        Ok(Self {
            model,
            seeds: meta.seeds,
            step: meta.step,
            epoch: meta.epoch,
        })
    }

    /// Writes through a temporary file so a crash never leaves a torn
    /// checkpoint behind.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("cscp.tmp");
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingCheckpoint(path.to_path_buf()));
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {}", path.display(), msg)),
            other => other,
        })
    }
}

fn write_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &x in t.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let len = self.u32()? as usize;
        let name = std::str::from_utf8(self.take(len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let ndim = self.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(self.u64()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("tensor `{}` is too large", name)))?;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok((name, Tensor::new(shape, data)?))
    }
}
