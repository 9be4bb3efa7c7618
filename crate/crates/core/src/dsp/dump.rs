//! Feature cache container.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | field                                   |
//! |-------|-----------------------------------------|
//! | 8     | magic `SIRNFEAT`                        |
//! | 4     | format version (`1`)                    |
//! | 1     | dtype code (`1` = f32)                  |
//! | 1     | number of dimensions `d`                |
//! | 2     | reserved, zero                          |
//! | 8 * d | dimension sizes as u64                  |
//! | 4 * n | row-major f32 payload, n = product(dims) |

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SIRNFEAT";
const VERSION: u32 = 1;
const DTYPE_F32: u8 = 1;

/// Dense row-major f32 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor32 {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor32 {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::invalid("tensor dims do not match payload length"));
        }
        if dims.len() > u8::MAX as usize {
            return Err(Error::invalid("too many tensor dimensions"));
        }
        Ok(Tensor32 { dims, data })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(DTYPE_F32);
        out.push(self.dims.len() as u8);
        out.extend_from_slice(&[0, 0]);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let bad = |why: &str| Error::format("feature dump", path, why.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        if bytes[12] != DTYPE_F32 {
            return Err(bad("unsupported dtype"));
        }
        let nd = bytes[13] as usize;
        let mut pos = 16;
        let mut dims = Vec::with_capacity(nd);
        for _ in 0..nd {
            let b = bytes.get(pos..pos + 8).ok_or_else(|| bad("truncated header"))?;
            dims.push(u64::from_le_bytes(b.try_into().unwrap()) as usize);
            pos += 8;
        }
        let n: usize = dims.iter().product();
        let payload = &bytes[pos..];
        if payload.len() != 4 * n {
            return Err(bad("payload length mismatch"));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Tensor32 { dims, data })
    }
}

pub fn write_tensor(path: &Path, t: &Tensor32) -> Result<()> {
    fs::write(path, t.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<Tensor32> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor32::from_bytes(path, &bytes)
}
