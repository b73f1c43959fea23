//! `VIGT` tensor container.
//!
//! ```text
//! magic "VIGT" | version u32 | count u32
//! per tensor: name_len u32 | name (UTF-8) | rank u32 | dims u64 x rank |
//!             dtype u8 | raw little-endian data
//! ```
//!
//! dtype codes: 1 = f32, 2 = f64, 3 = u8. All integers are little-endian.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::error::{Result, VigError};
use crate::tensor::{Real, Tensor};

pub const MAGIC: &[u8; 4] = b"VIGT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype_code(&self) -> u8 {
        match self {
            TensorData::F32(_) => 1,
            TensorData::F64(_) => 2,
            TensorData::U8(_) => 3,
        }
    }

    fn elem_size(code: u8) -> Option<usize> {
        match code {
            1 => Some(4),
            2 => Some(8),
            3 => Some(1),
            _ => None,
        }
    }
}

/// A named entry of a container.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<u64>,
    pub data: TensorData,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, dims: Vec<u64>, data: TensorData) -> Self {
        NamedTensor {
            name: name.into(),
            dims,
            data,
        }
    }

    pub fn from_tensor<T: Real>(name: impl Into<String>, t: &Tensor<T>) -> Self {
        let dims = t.shape().iter().map(|&d| d as u64).collect();
        let data = match T::DTYPE_CODE {
            1 => TensorData::F32(t.data().iter().map(|v| v.as_f64() as f32).collect()),
            _ => TensorData::F64(t.data().iter().map(|v| v.as_f64()).collect()),
        };
        NamedTensor::new(name, dims, data)
    }

    /// Converts floating data to a constant tensor of element type `T`.
    pub fn to_tensor<T: Real>(&self) -> Result<Tensor<T>> {
        let shape: Vec<usize> = self.dims.iter().map(|&d| d as usize).collect();
        let data: Vec<T> = match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| T::lit(x as f64)).collect(),
            TensorData::F64(v) => v.iter().map(|&x| T::lit(x)).collect(),
            TensorData::U8(_) => {
                return Err(VigError::Data(format!("tensor '{}' holds bytes, not reals", self.name)))
            }
        };
        if shape.is_empty() {
            return Tensor::new(data, &[1]);
        }
        Tensor::new(data, &shape)
    }

    pub fn as_f64_scalar(&self) -> Option<f64> {
        match &self.data {
            TensorData::F64(v) if v.len() == 1 => Some(v[0]),
            TensorData::F32(v) if v.len() == 1 => Some(v[0] as f64),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match &self.data {
            TensorData::U8(v) => std::str::from_utf8(v).ok(),
            _ => None,
        }
    }
}

fn check_unique<'a>(names: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = HashSet::new();
    for n in names {
        if !seen.insert(n) {
            return Err(VigError::Data(format!("duplicate tensor name '{n}'")));
        }
    }
    Ok(())
}

pub fn encode(tensors: &[NamedTensor]) -> Result<Vec<u8>> {
    check_unique(tensors.iter().map(|t| t.name.as_str()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        let numel: u64 = t.dims.iter().product();
        if numel != t.data.len() as u64 {
            return Err(VigError::Data(format!(
                "tensor '{}' declares dims {:?} but holds {} values",
                t.name,
                t.dims,
                t.data.len()
            )));
        }
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
        for d in &t.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.push(t.data.dtype_code());
        match &t.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U8(v) => out.extend_from_slice(v),
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(VigError::format(
                self.pos as u64,
                format!("truncated while reading {what}: need {n} bytes, {} left", self.buf.len() - self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(buf: &[u8]) -> Result<Vec<NamedTensor>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(VigError::format(0, "bad magic, expected \"VIGT\""));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(VigError::format(4, format!("unsupported version {version}")));
    }
    let count = r.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for idx in 0..count {
        let start = r.pos;
        let name_len = r.u32(&format!("name length of tensor #{idx}"))? as usize;
        let name = std::str::from_utf8(r.take(name_len, &format!("name of tensor #{idx}"))?)
            .map_err(|_| VigError::format(start as u64 + 4, format!("tensor #{idx} name is not UTF-8")))?
            .to_string();
        let rank = r.u32(&format!("rank of tensor '{name}'"))? as usize;
        let mut dims = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            dims.push(r.u64(&format!("dims of tensor '{name}'"))?);
        }
        let code_pos = r.pos;
        let code = r.take(1, &format!("dtype of tensor '{name}'"))?[0];
        let elem = TensorData::elem_size(code)
            .ok_or_else(|| VigError::format(code_pos as u64, format!("unknown dtype code {code} for tensor '{name}'")))?;
        let numel = dims
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .and_then(|n| usize::try_from(n).ok())
            .and_then(|n| n.checked_mul(elem))
            .ok_or_else(|| VigError::format(start as u64, format!("tensor '{name}' size overflows")))?;
        let raw = r.take(numel, &format!("data of tensor '{name}'"))?;
        let data = match code {
            1 => TensorData::F32(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
            2 => TensorData::F64(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
            _ => TensorData::U8(raw.to_vec()),
        };
        tensors.push(NamedTensor { name, dims, data });
    }
    if r.pos != buf.len() {
        return Err(VigError::format(r.pos as u64, format!("{} trailing bytes", buf.len() - r.pos)));
    }
    check_unique(tensors.iter().map(|t| t.name.as_str()))?;
    Ok(tensors)
}

pub fn write_tensors(path: impl AsRef<Path>, tensors: &[NamedTensor]) -> Result<()> {
    fs::write(path, encode(tensors)?)?;
    Ok(())
}

pub fn read_tensors(path: impl AsRef<Path>) -> Result<Vec<NamedTensor>> {
    decode(&fs::read(path)?)
}
