//! Versioned flat checkpoint records.
//!
//! Byte layout (all integers and floats little-endian):
//!
//! ```text
//! magic      4 bytes   b"CHIK"
//! version    u32       currently 1
//! count      u32       number of tensors
//! shapes     count × { rank: u32, dims: rank × u64 }
//! payload    Σ prod(dims) × f64, tensors in header order, each row-major
//! ```
//!
//! The payload stores raw IEEE-754 bits, so a write/read cycle is bit-exact
//! (NaN payloads included).

use std::path::Path;

use crate::error::{ChiError, Result};

pub const MAGIC: [u8; 4] = *b"CHIK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self::new(vec![data.len()], data)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn new(tensors: Vec<Tensor>) -> Self {
        Self { tensors }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
        }
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut reader = Reader { bytes, pos: 0 };
        if reader.take(4)? != MAGIC {
            return Err(ChiError::Checkpoint("bad magic".into()));
        }
        let version = reader.u32()?;
        if version != VERSION {
            return Err(ChiError::Checkpoint(format!(
                "unsupported version {version}"
            )));
        }
        let count = reader.u32()? as usize;
        let mut shapes = Vec::with_capacity(count);
        for _ in 0..count {
            let rank = reader.u32()? as usize;
            let shape = (0..rank)
                .map(|_| reader.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            shapes.push(shape);
        }
        let mut tensors = Vec::with_capacity(count);
        for shape in shapes {
            let n: usize = shape.iter().product();
            let data = (0..n)
                .map(|_| reader.u64().map(f64::from_bits))
                .collect::<Result<Vec<_>>>()?;
            tensors.push(Tensor { shape, data });
        }
        if reader.pos != bytes.len() {
            return Err(ChiError::Checkpoint("trailing bytes".into()));
        }
        Ok(Self { tensors })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(ChiError::Checkpoint("truncated record".into()));
        }
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
