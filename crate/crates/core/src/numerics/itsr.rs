//! `ITSR` binary tensor files.
//!
//! Layout (all integers little-endian):
//!
//! | bytes        | content                          |
//! |--------------|----------------------------------|
//! | 4            | magic `ITSR`                     |
//! | 4            | `u32` version, always 1          |
//! | 1            | dtype tag, 0 = f32, 1 = f64      |
//! | 1            | `u8` number of dimensions        |
//! | 8 × ndim     | `u64` dimension sizes            |
//! | rest         | row-major element data           |
//!
//! Readers reject trailing bytes and non-finite values.

use std::fs;
use std::path::Path;

use super::tensor::{DType, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ITSR";
pub const VERSION: u32 = 1;

pub fn encode(tensor: &Tensor) -> Result<Vec<u8>> {
    let ndim = u8::try_from(tensor.shape().len())
        .map_err(|_| Error::Format(format!("{} dimensions do not fit in u8", tensor.shape().len())))?;
    let dtype = tensor.dtype();
    let mut out = Vec::with_capacity(10 + 8 * ndim as usize + tensor.numel() * dtype.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(dtype.tag());
    out.push(ndim);
    for &d in tensor.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match dtype {
        DType::F32 => {
            for &v in tensor.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        DType::F64 => {
            for &v in tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated file while reading {what}")))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("slice length checked"))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != MAGIC {
        return Err(Error::Format("bad magic, expected `ITSR`".into()));
    }
    let version = u32::from_le_bytes(cur.array("version")?);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let [tag] = cur.array::<1>("dtype")?;
    let dtype = DType::from_tag(tag).ok_or_else(|| Error::Format(format!("unknown dtype tag {tag}")))?;
    let [ndim] = cur.array::<1>("ndim")?;
    let mut shape = Vec::with_capacity(ndim as usize);
    for _ in 0..ndim {
        let d = u64::from_le_bytes(cur.array("dimension")?);
        shape.push(usize::try_from(d).map_err(|_| Error::Format(format!("dimension {d} too large")))?);
    }
    let numel = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("element count overflows".into()))?;
    let payload_len = numel
        .checked_mul(dtype.size())
        .ok_or_else(|| Error::Format("payload size overflows".into()))?;
    let payload = cur.take(payload_len, "data")?;
    if cur.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after tensor data",
            bytes.len() - cur.pos
        )));
    }
    let data: Vec<f64> = match dtype {
        DType::F32 => payload
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("chunk of 4"))))
            .collect(),
        DType::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect(),
    };
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("non-finite value at flat index {i}")));
    }
    Ok(Tensor::new(shape, data)?.with_dtype(dtype))
}

pub fn read(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn write(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(tensor)?).map_err(|e| Error::io(path, e))
}
