//! Binary array container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  b"BSTYARR1"
//! dtype    1 byte   1 = f64, 2 = f32
//! ndim     u32
//! shape    ndim x u64
//! data     row-major elements
//! meta_len u64      0 when there is no metadata
//! meta     meta_len bytes of UTF-8 JSON
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::Value;
use thiserror::Error;

use crate::linalg::Matrix;

pub const MAGIC: &[u8; 8] = b"BSTYARR1";

#[derive(Debug, Error)]
pub enum ArrayError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: not an array container ({reason})")]
    Format { path: PathBuf, reason: String },
    #[error("shape {shape:?} does not match {len} elements")]
    Shape { shape: Vec<u64>, len: usize },
    #[error("expected a {expected}-d array, found shape {shape:?}")]
    Rank { expected: usize, shape: Vec<u64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F64,
    F32,
}

impl Dtype {
    fn tag(self) -> u8 {
        match self {
            Dtype::F64 => 1,
            Dtype::F32 => 2,
        }
    }

    fn from_tag(t: u8) -> Option<Self> {
        match t {
            1 => Some(Dtype::F64),
            2 => Some(Dtype::F32),
            _ => None,
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::F32 => 4,
        }
    }
}

/// An n-d array held as f64 plus optional JSON metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayFile {
    pub shape: Vec<u64>,
    pub data: Vec<f64>,
    pub meta: Option<Value>,
}

impl ArrayFile {
    pub fn new(shape: Vec<u64>, data: Vec<f64>, meta: Option<Value>) -> Result<Self, ArrayError> {
        let n: u64 = shape.iter().product();
        if n as usize != data.len() {
            return Err(ArrayError::Shape {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data, meta })
    }

    pub fn from_matrix(m: &Matrix, meta: Option<Value>) -> Self {
        Self {
            shape: vec![m.rows() as u64, m.cols() as u64],
            data: m.data().to_vec(),
            meta,
        }
    }

    pub fn to_matrix(&self) -> Result<Matrix, ArrayError> {
        match self.shape[..] {
            [r, c] => Ok(Matrix::from_vec(r as usize, c as usize, self.data.clone())),
            _ => Err(ArrayError::Rank {
                expected: 2,
                shape: self.shape.clone(),
            }),
        }
    }

    pub fn encode(&self, dtype: Dtype) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.data.len() * dtype.width());
        out.extend_from_slice(MAGIC);
        out.push(dtype.tag());
        out.extend_from_slice(&(self.shape.len() as u32).to_le_bytes());
        for d in &self.shape {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for &x in &self.data {
            match dtype {
                Dtype::F64 => out.extend_from_slice(&x.to_le_bytes()),
                Dtype::F32 => out.extend_from_slice(&(x as f32).to_le_bytes()),
            }
        }
        let meta = self
            .meta
            .as_ref()
            .map(|m| serde_json::to_vec(m).expect("JSON values always serialize"))
            .unwrap_or_default();
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self, ArrayError> {
        let fail = |reason: &str| ArrayError::Format {
            path: path.to_owned(),
            reason: reason.to_owned(),
        };
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8).ok_or_else(|| fail("truncated header"))? != MAGIC {
            return Err(fail("bad magic"));
        }
        let tag = r.take(1).ok_or_else(|| fail("truncated header"))?[0];
        let dtype = Dtype::from_tag(tag).ok_or_else(|| fail("unknown element type"))?;
        let ndim = r.u32().ok_or_else(|| fail("truncated header"))?;
        let mut shape = Vec::with_capacity(ndim as usize);
        for _ in 0..ndim {
            shape.push(r.u64().ok_or_else(|| fail("truncated shape"))?);
        }
        let n = shape
            .iter()
            .try_fold(1u64, |a, &d| a.checked_mul(d))
            .and_then(|n| usize::try_from(n).ok())
            .ok_or_else(|| fail("shape overflows"))?;
        let raw = n
            .checked_mul(dtype.width())
            .and_then(|len| r.take(len))
            .ok_or_else(|| fail("truncated data"))?;
        let data = match dtype {
            Dtype::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            Dtype::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
        };
        let meta_len = r.u64().ok_or_else(|| fail("missing metadata length"))?;
        let meta_bytes = usize::try_from(meta_len)
            .ok()
            .and_then(|l| r.take(l))
            .ok_or_else(|| fail("truncated metadata"))?;
        if r.pos != bytes.len() {
            return Err(fail("trailing bytes"));
        }
        let meta = if meta_bytes.is_empty() {
            None
        } else {
            Some(serde_json::from_slice(meta_bytes).map_err(|e| fail(&e.to_string()))?)
        };
        Ok(Self { shape, data, meta })
    }

    pub fn save(&self, path: &Path) -> Result<(), ArrayError> {
        let io = |source| ArrayError::Io {
            path: path.to_owned(),
            source,
        };
        let mut f = fs::File::create(path).map_err(io)?;
        f.write_all(&self.encode(Dtype::F64)).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, ArrayError> {
        let bytes = fs::read(path).map_err(|source| ArrayError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::decode(&bytes, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}
