//! Checkpoint container.
//!
//! All integers little-endian:
//!
//! ```text
//! magic      8 bytes  "SIRNCKPT"
//! version    u32
//! cfg_len    u64, followed by the model config as UTF-8 TOML
//! n_tensors  u32
//! per tensor, in declaration order:
//!   name_len u16, name bytes
//!   group    u8
//!   ndim     u8, then ndim x u64 dims
//!   data     f64 x product(dims)
//! ```

use std::fs;
use std::path::Path;

use super::params::{ParamGroup, Params, Tensor};
use super::{Model, ModelConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SIRNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode(model: &Model) -> Result<Vec<u8>> {
    let cfg = toml::to_string(model.config()).map_err(|e| Error::invalid(format!("config serialization: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
    out.extend_from_slice(cfg.as_bytes());
    let tensors = model.params().tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(t.group.code());
        out.push(t.shape.len() as u8);
        for &d in &t.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, why: impl Into<String>) -> Error {
        Error::format("checkpoint", self.path, why)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .buf
            .get(self.pos..self.pos + n)
            .ok_or_else(|| self.err(format!("truncated at byte {}", self.pos)))?;
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(path: &Path, bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { buf: bytes, pos: 0, path };
    if r.take(8)? != MAGIC {
        return Err(r.err("bad magic"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(r.err(format!("unsupported version {version}")));
    }
    let cfg_len = r.u64()? as usize;
    let cfg_text = std::str::from_utf8(r.take(cfg_len)?).map_err(|_| r.err("config is not UTF-8"))?;
    let cfg: ModelConfig = toml::from_str(cfg_text).map_err(|e| r.err(format!("config: {e}")))?;
    let n = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(n);
    for _ in 0..n {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| r.err("tensor name is not UTF-8"))?;
        let group = ParamGroup::from_code(r.u8()?).ok_or_else(|| r.err(format!("{name}: unknown group")))?;
        let ndim = r.u8()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let data = r
            .take(len * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(Tensor { name, shape, group, data });
    }
    if r.pos != bytes.len() {
        return Err(r.err("trailing bytes"));
    }
    Model::from_params(cfg, Params::from_tensors(tensors)).map_err(|e| r.err(e.to_string()))
}

pub fn write_checkpoint(path: &Path, model: &Model) -> Result<()> {
    fs::write(path, encode(model)?).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(path, &bytes)
}
