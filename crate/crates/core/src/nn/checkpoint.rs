//! Binary parameter container.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic    8 bytes  "VRANCKPT"
//! version  u32      1
//! count    u32      number of tensors
//! repeated count times:
//!   name_len u32, name (UTF-8, name_len bytes)
//!   ndim u32, dims (ndim x u64)
//!   values (prod(dims) x f64)
//! meta     u32      number of metadata entries
//! repeated meta times:
//!   name_len u32, name (UTF-8), value u64
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use super::layers::ParamSet;
use super::{NnError, Tensor};

pub const MAGIC: &[u8; 8] = b"VRANCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor)>,
    pub meta: Vec<(String, u64)>,
}

fn err(msg: impl Into<String>) -> NnError {
    NnError::Checkpoint(msg.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| err(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn name(&mut self) -> Result<String, NnError> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| err("name is not UTF-8"))
    }
}

impl Checkpoint {
    pub fn push_tensor(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.push((name.into(), t));
    }

    /// Appends every tensor of `set` under `prefix`.
    pub fn push_set(&mut self, prefix: &str, set: &impl ParamSet) {
        set.visit(prefix, &mut |n, t| self.tensors.push((n, t.clone())));
    }

    pub fn push_meta(&mut self, name: impl Into<String>, value: u64) {
        self.meta.push((name.into(), value));
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn meta(&self, name: &str) -> Option<u64> {
        self.meta.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    /// Overwrites every tensor of `set` from the entries under `prefix`.
    /// Names and shapes must match.
    pub fn fill_set(&self, prefix: &str, set: &mut impl ParamSet) -> Result<(), NnError> {
        let mut result = Ok(());
        set.visit_mut(prefix, &mut |n, t| {
            if result.is_err() {
                return;
            }
            match self.tensor(&n) {
                Some(src) if src.shape() == t.shape() => *t = src.clone(),
                Some(src) => {
                    result = Err(err(format!(
                        "tensor {n} has shape {:?}, expected {:?}",
                        src.shape(),
                        t.shape()
                    )))
                }
                None => result = Err(err(format!("tensor {n} is missing"))),
            }
        });
        result
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (name, v) in &self.meta {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(err("bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(err(format!("unsupported version {version}")));
        }
        let mut ck = Checkpoint::default();
        for _ in 0..r.u32()? {
            let name = r.name()?;
            let ndim = r.u32()? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(usize::try_from(r.u64()?).map_err(|_| err("dimension overflow"))?);
            }
            let count = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| err("dimension overflow"))?;
            let raw = r.take(count.checked_mul(8).ok_or_else(|| err("size overflow"))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            ck.tensors.push((name, Tensor::new(dims, data)?));
        }
        for _ in 0..r.u32()? {
            let name = r.name()?;
            let v = r.u64()?;
            ck.meta.push((name, v));
        }
        if r.pos != bytes.len() {
            return Err(err("trailing bytes"));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// SHA-256 of the serialized bytes, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}
