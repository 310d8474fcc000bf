//! The `OTSF` tensor container.
//!
//! Layout, all integers little-endian: magic `OTSF`, version `u32 = 1`,
//! record count `u32`, then per record a `u16` name length, the UTF-8 name,
//! a `u8` dtype code, `u32` rank, `u32` dims, and the row-major payload.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::error::{OtsError, Result};
use crate::numcore::Matrix;

pub const MAGIC: &[u8; 4] = b"OTSF";
pub const VERSION: u32 = 1;

/// Scalar type of a record's payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F64,
    F32,
    U8,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F64 => 1,
            DType::F32 => 2,
            DType::U8 => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(DType::F64),
            2 => Some(DType::F32),
            3 => Some(DType::U8),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F64 => 8,
            DType::F32 => 4,
            DType::U8 => 1,
        }
    }
}

/// One named tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorRecord {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
    payload: Vec<u8>,
}

impl TensorRecord {
    /// Wraps raw little-endian bytes, checking that the length fits the shape.
    pub fn new(name: impl Into<String>, dtype: DType, shape: Vec<usize>, payload: Vec<u8>) -> Result<Self> {
        let name = name.into();
        if name.len() > u16::MAX as usize {
            return Err(OtsError::Config(format!("record name of {} bytes is too long", name.len())));
        }
        let expected = shape.iter().product::<usize>() * dtype.size();
        if payload.len() != expected {
            return Err(OtsError::Config(format!(
                "record {name:?}: payload has {} bytes, shape {shape:?} needs {expected}",
                payload.len()
            )));
        }
        Ok(Self {
            name,
            dtype,
            shape,
            payload,
        })
    }

    pub fn from_f64(name: impl Into<String>, shape: Vec<usize>, values: &[f64]) -> Result<Self> {
        let payload = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        Self::new(name, DType::F64, shape, payload)
    }

    pub fn from_f32(name: impl Into<String>, shape: Vec<usize>, values: &[f32]) -> Result<Self> {
        let payload = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        Self::new(name, DType::F32, shape, payload)
    }

    pub fn from_u8(name: impl Into<String>, shape: Vec<usize>, values: &[u8]) -> Result<Self> {
        Self::new(name, DType::U8, shape, values.to_vec())
    }

    /// A rank-2 f64 record.
    pub fn from_matrix(name: impl Into<String>, m: &Matrix) -> Self {
        Self::from_f64(name, vec![m.rows(), m.cols()], m.as_slice())
            .expect("matrix length matches its shape")
    }

    /// UTF-8 text stored as a rank-1 u8 record.
    pub fn from_text(name: impl Into<String>, text: &str) -> Self {
        Self::from_u8(name, vec![text.len()], text.as_bytes()).expect("text length matches its shape")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }

    /// Values as f64; f32 and u8 are widened.
    pub fn to_f64(&self) -> Vec<f64> {
        match self.dtype {
            DType::F64 => self
                .payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            DType::F32 => self
                .payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            DType::U8 => self.payload.iter().map(|&b| b as f64).collect(),
        }
    }

    /// Rank-2 records as they are; rank-1 as a column; rank-0 as 1x1.
    pub fn to_matrix(&self) -> Result<Matrix> {
        let (r, c) = match self.shape.as_slice() {
            [] => (1, 1),
            [n] => (*n, 1),
            [r, c] => (*r, *c),
            s => {
                return Err(OtsError::shape(
                    "to_matrix",
                    format!("record {:?} has rank {}", self.name, s.len()),
                ))
            }
        };
        Matrix::from_vec(r, c, self.to_f64())
            .map_err(|e| OtsError::Config(format!("record {:?}: {e}", self.name)))
    }

    pub fn to_text(&self) -> Result<String> {
        if self.dtype != DType::U8 {
            return Err(OtsError::Config(format!("record {:?} is not text", self.name)));
        }
        String::from_utf8(self.payload.clone())
            .map_err(|_| OtsError::Config(format!("record {:?} is not valid UTF-8", self.name)))
    }
}

/// Serializes records; names must be unique.
pub fn encode(records: &[TensorRecord]) -> Result<Vec<u8>> {
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(r.name.as_str()) {
            return Err(OtsError::Config(format!("duplicate record name {:?}", r.name)));
        }
    }
    let count = u32::try_from(records.len())
        .map_err(|_| OtsError::Config("too many records".into()))?;
    let size: usize = records
        .iter()
        .map(|r| 2 + r.name.len() + 1 + 4 + 4 * r.shape.len() + r.payload.len())
        .sum();
    let mut out = Vec::with_capacity(12 + size);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for r in records {
        out.extend_from_slice(&(r.name.len() as u16).to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.push(r.dtype.code());
        out.extend_from_slice(&(r.shape.len() as u32).to_le_bytes());
        for &d in &r.shape {
            let d = u32::try_from(d).map_err(|_| OtsError::Config(format!("dimension {d} too large")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.extend_from_slice(&r.payload);
    }
    Ok(out)
}

struct Reader<'b> {
    bytes: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'b [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(OtsError::format(
                self.pos as u64,
                format!("truncated while reading {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }
}

/// Parses a container; errors carry the byte offset of the problem.
pub fn decode(bytes: &[u8]) -> Result<Vec<TensorRecord>> {
    let mut rd = Reader { bytes, pos: 0 };
    if rd.take(4, "magic")? != MAGIC {
        return Err(OtsError::format(0, "bad magic, expected \"OTSF\""));
    }
    let version = rd.u32("version")?;
    if version != VERSION {
        return Err(OtsError::format(4, format!("unsupported version {version}")));
    }
    let count = rd.u32("record count")? as usize;
    let mut records = Vec::with_capacity(count.min(1 << 16));
    let mut seen = HashSet::new();
    for idx in 0..count {
        let start = rd.pos as u64;
        let len = rd.u16("name length")? as usize;
        let name = std::str::from_utf8(rd.take(len, "name")?)
            .map_err(|_| OtsError::format(start + 2, format!("record {idx} name is not UTF-8")))?
            .to_string();
        let code_at = rd.pos as u64;
        let code = rd.take(1, "dtype")?[0];
        let dtype = DType::from_code(code)
            .ok_or_else(|| OtsError::format(code_at, format!("unknown dtype code {code}")))?;
        let rank = rd.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(rd.u32("dimension")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(dtype.size(), |acc: usize, &d| acc.checked_mul(d))
            .ok_or_else(|| OtsError::format(start, format!("record {name:?} is too large")))?;
        let payload = rd.take(n, "payload")?.to_vec();
        if !seen.insert(name.clone()) {
            return Err(OtsError::format(start, format!("duplicate record name {name:?}")));
        }
        records.push(TensorRecord {
            name,
            dtype,
            shape,
            payload,
        });
    }
    if rd.pos != bytes.len() {
        return Err(OtsError::format(
            rd.pos as u64,
            format!("{} trailing bytes after last record", bytes.len() - rd.pos),
        ));
    }
    Ok(records)
}

pub fn write_container(path: impl AsRef<Path>, records: &[TensorRecord]) -> Result<()> {
    fs::write(path, encode(records)?)?;
    Ok(())
}

pub fn read_container(path: impl AsRef<Path>) -> Result<Vec<TensorRecord>> {
    decode(&fs::read(path)?)
}
