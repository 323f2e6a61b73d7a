//! Named-tensor archive: a single binary file holding a JSON header and an
//! ordered table of little-endian tensors.
//!
//! Layout: magic `CAAECKPT`, `u32` format version, `u32` header length,
//! header JSON, `u32` tensor count, then per tensor `u16` name length,
//! name bytes, `u8` dtype (0 = f32, 1 = f64), `u8` rank, `u32` dims, data.

use std::path::Path;

use indexmap::IndexMap;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::tensor::{DType, Real, Tensor};

pub const MAGIC: &[u8; 8] = b"CAAECKPT";
pub const FORMAT_VERSION: u32 = 1;

/// A tensor of either storage precision.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl StoredTensor {
    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Self {
        match T::DTYPE {
            DType::F32 => StoredTensor::F32(t.cast()),
            DType::F64 => StoredTensor::F64(t.cast()),
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            StoredTensor::F32(t) => t.shape(),
            StoredTensor::F64(t) => t.shape(),
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            StoredTensor::F32(_) => DType::F32,
            StoredTensor::F64(_) => DType::F64,
        }
    }

    /// Converts to the requested precision; exact when it matches storage.
    pub fn to<T: Real>(&self) -> Tensor<T> {
        match self {
            StoredTensor::F32(t) => t.cast(),
            StoredTensor::F64(t) => t.cast(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub header: Value,
    pub tensors: IndexMap<String, StoredTensor>,
}

impl Archive {
    pub fn new(header: Value) -> Self {
        Self {
            header,
            tensors: IndexMap::new(),
        }
    }

    pub fn insert<T: Real>(&mut self, name: impl Into<String>, t: &Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::Checkpoint(format!("duplicate tensor name {name}")));
        }
        self.tensors.insert(name, StoredTensor::from_tensor(t));
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let header = serde_json::to_vec(&self.header)?;
        out.extend_from_slice(&len_u32(header.len(), "header")?.to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&len_u32(self.tensors.len(), "tensor count")?.to_le_bytes());
        for (name, t) in &self.tensors {
            let name_len = u16::try_from(name.len()).map_err(|_| Error::Checkpoint(format!("tensor name too long: {name}")))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(match t.dtype() {
                DType::F32 => 0,
                DType::F64 => 1,
            });
            let rank = u8::try_from(t.shape().len()).map_err(|_| Error::Checkpoint(format!("{name}: rank too large")))?;
            out.push(rank);
            for &d in t.shape() {
                out.extend_from_slice(&len_u32(d, "dimension")?.to_le_bytes());
            }
            match t {
                StoredTensor::F32(t) => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
                StoredTensor::F64(t) => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a tensor archive (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported archive version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let header_len = r.u32()? as usize;
        let header: Value = serde_json::from_slice(r.take(header_len)?)?;
        let count = r.u32()? as usize;
        let mut tensors = IndexMap::new();
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let dtype = r.u8()?;
            let rank = r.u8()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Checkpoint(format!("{name}: shape overflows")))?;
            let t = match dtype {
                0 => {
                    let raw = r.take(n.checked_mul(4).ok_or_else(truncated)?)?;
                    let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
                    StoredTensor::F32(Tensor::from_vec(&shape, data)?)
                }
                1 => {
                    let raw = r.take(n.checked_mul(8).ok_or_else(truncated)?)?;
                    let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
                    StoredTensor::F64(Tensor::from_vec(&shape, data)?)
                }
                other => return Err(Error::Checkpoint(format!("{name}: unknown dtype code {other}"))),
            };
            if tensors.insert(name.clone(), t).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor name {name}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes after tensor table", bytes.len() - r.pos)));
        }
        Ok(Self { header, tensors })
    }

    /// Writes to a sibling temporary file and renames it into place, so a
    /// crash never leaves a half-written archive at `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".partial");
        let tmp = std::path::PathBuf::from(tmp);
        std::fs::write(&tmp, self.to_bytes()?).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming into {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

fn len_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Checkpoint(format!("{what} {n} does not fit in u32")))
}

fn truncated() -> Error {
    Error::Checkpoint("archive is truncated".into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(truncated)?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
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
}
