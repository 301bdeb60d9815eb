//! `.fgt` named-tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"FGTW" | version: u32 = 1 | header_len: u64 | header: JSON (header_len bytes)
//! zero padding | payloads, each at an absolute 64-byte aligned offset
//! ```
//!
//! The header is a JSON array of `{"name","dtype","shape","offset"}` objects
//! in insertion order. Payloads are row-major. Writing is canonical: equal
//! containers produce identical bytes.

use std::collections::HashSet;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"FGTW";
pub const VERSION: u32 = 1;
pub const ALIGN: usize = 64;
const PREAMBLE: usize = 16;

#[derive(Debug, Error)]
pub enum TensorIoError {
    #[error("duplicate tensor name {0:?}")]
    DuplicateName(String),
    #[error("invalid tensor name {0:?}: names must be non-empty ASCII")]
    InvalidName(String),
    #[error("tensor {name:?}: shape {shape:?} needs {expected} elements, payload has {found}")]
    ShapePayloadMismatch {
        name: String,
        shape: Vec<usize>,
        expected: usize,
        found: usize,
    },
    #[error("not an .fgt container (bad magic)")]
    BadMagic,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),
    #[error("payload of tensor {0:?} runs past the end of the file")]
    TruncatedPayload(String),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("tensor {name:?}: expected {expected}, found shape {shape:?}")]
    WrongRank {
        name: String,
        expected: &'static str,
        shape: Vec<usize>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
        }
    }
}

/// Equality is bitwise on the payload, so NaNs compare equal to themselves.
#[derive(Debug, Clone)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl PartialEq for Tensor {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && match (&self.data, &other.data) {
                (TensorData::F32(a), TensorData::F32(b)) => {
                    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
                }
                (TensorData::F64(a), TensorData::F64(b)) => {
                    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
                }
                _ => false,
            }
    }
}

impl Tensor {
    pub fn f64(shape: Vec<usize>, data: Vec<f64>) -> Self {
        Tensor {
            shape,
            data: TensorData::F64(data),
        }
    }

    pub fn f32(shape: Vec<usize>, data: Vec<f32>) -> Self {
        Tensor {
            shape,
            data: TensorData::F32(data),
        }
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn numel(&self) -> Option<usize> {
        self.shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
    }

    pub fn from_matrix(m: &Array2<f64>) -> Self {
        Tensor::f64(vec![m.nrows(), m.ncols()], m.iter().copied().collect())
    }

    pub fn from_vector(v: &Array1<f64>) -> Self {
        Tensor::f64(vec![v.len()], v.to_vec())
    }

    fn values_f64(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F64(v) => v.clone(),
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }

    /// Rank-2 tensor as a matrix; f32 payloads are widened.
    pub fn to_matrix(&self) -> Result<Array2<f64>, TensorIoError> {
        match self.shape[..] {
            [r, c] => Ok(Array2::from_shape_vec((r, c), self.values_f64())
                .map_err(|e| TensorIoError::MalformedHeader(e.to_string()))?),
            _ => Err(TensorIoError::WrongRank {
                name: String::new(),
                expected: "a matrix",
                shape: self.shape.clone(),
            }),
        }
    }

    /// Rank-1 tensor as a vector; f32 payloads are widened.
    pub fn to_vector(&self) -> Result<Array1<f64>, TensorIoError> {
        match self.shape[..] {
            [_] => Ok(Array1::from(self.values_f64())),
            _ => Err(TensorIoError::WrongRank {
                name: String::new(),
                expected: "a vector",
                shape: self.shape.clone(),
            }),
        }
    }
}

/// Insertion-ordered set of uniquely named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorContainer {
    entries: Vec<(String, Tensor)>,
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && name.is_ascii()
}

impl TensorContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<(), TensorIoError> {
        let name = name.into();
        if !valid_name(&name) {
            return Err(TensorIoError::InvalidName(name));
        }
        if self.get(&name).is_some() {
            return Err(TensorIoError::DuplicateName(name));
        }
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        let idx = self.entries.iter().position(|(n, _)| n == name)?;
        Some(self.entries.remove(idx).1)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Fetches a matrix, naming the tensor in the error if it is missing.
    pub fn matrix(&self, name: &str) -> Result<Array2<f64>, TensorIoError> {
        let t = self
            .get(name)
            .ok_or_else(|| TensorIoError::MalformedHeader(format!("missing tensor {name:?}")))?;
        t.to_matrix().map_err(|e| match e {
            TensorIoError::WrongRank {
                expected, shape, ..
            } => TensorIoError::WrongRank {
                name: name.to_owned(),
                expected,
                shape,
            },
            other => other,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, TensorIoError> {
        write_container(&self.entries)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TensorIoError> {
        Ok(TensorContainer {
            entries: read_container(bytes)?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TensorIoError> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TensorIoError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderEntry {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
    offset: u64,
}

fn align_up(x: usize) -> usize {
    x.div_ceil(ALIGN) * ALIGN
}

pub fn write_container(entries: &[(String, Tensor)]) -> Result<Vec<u8>, TensorIoError> {
    let mut seen = HashSet::new();
    for (name, t) in entries {
        if !valid_name(name) {
            return Err(TensorIoError::InvalidName(name.clone()));
        }
        if !seen.insert(name.as_str()) {
            return Err(TensorIoError::DuplicateName(name.clone()));
        }
        let expected = t
            .numel()
            .ok_or_else(|| TensorIoError::ShapePayloadMismatch {
                name: name.clone(),
                shape: t.shape.clone(),
                expected: usize::MAX,
                found: t.data.len(),
            })?;
        if expected != t.data.len() {
            return Err(TensorIoError::ShapePayloadMismatch {
                name: name.clone(),
                shape: t.shape.clone(),
                expected,
                found: t.data.len(),
            });
        }
    }

    // Offsets depend on the header length, which depends on the offsets'
    // digit counts; iterate until the layout is stable.
    let mut header_len = 0usize;
    let (header, offsets) = loop {
        let mut cursor = align_up(PREAMBLE + header_len);
        let mut offsets = Vec::with_capacity(entries.len());
        let mut header = Vec::with_capacity(entries.len());
        for (name, t) in entries {
            offsets.push(cursor);
            header.push(HeaderEntry {
                name: name.clone(),
                dtype: t.dtype(),
                shape: t.shape.clone(),
                offset: cursor as u64,
            });
            cursor = align_up(cursor + t.data.len() * t.dtype().size());
        }
        let json = serde_json::to_vec(&header).expect("header serializes");
        if json.len() == header_len {
            break (json, offsets);
        }
        header_len = json.len();
    };

    let mut out = Vec::with_capacity(offsets.last().copied().unwrap_or(0) + 64);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for ((_, t), &offset) in entries.iter().zip(&offsets) {
        out.resize(offset, 0);
        match &t.data {
            TensorData::F32(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
    Ok(out)
}

pub fn read_container(bytes: &[u8]) -> Result<Vec<(String, Tensor)>, TensorIoError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(TensorIoError::BadMagic);
    }
    if bytes.len() < PREAMBLE {
        return Err(TensorIoError::MalformedHeader("truncated preamble".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(TensorIoError::UnsupportedVersion(version));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let header_end = usize::try_from(header_len)
        .ok()
        .and_then(|l| l.checked_add(PREAMBLE))
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| TensorIoError::MalformedHeader("header runs past end of file".into()))?;
    let header: Vec<HeaderEntry> = serde_json::from_slice(&bytes[PREAMBLE..header_end])
        .map_err(|e| TensorIoError::MalformedHeader(e.to_string()))?;

    let mut seen = HashSet::new();
    let mut min_offset = header_end;
    let mut entries = Vec::with_capacity(header.len());
    for h in header {
        if !valid_name(&h.name) {
            return Err(TensorIoError::MalformedHeader(format!(
                "invalid name {:?}",
                h.name
            )));
        }
        if !seen.insert(h.name.clone()) {
            return Err(TensorIoError::MalformedHeader(format!(
                "duplicate name {:?}",
                h.name
            )));
        }
        let offset = usize::try_from(h.offset)
            .map_err(|_| TensorIoError::TruncatedPayload(h.name.clone()))?;
        if offset % ALIGN != 0 {
            return Err(TensorIoError::MalformedHeader(format!(
                "offset {offset} of {:?} is not {ALIGN}-byte aligned",
                h.name
            )));
        }
        if offset < min_offset {
            return Err(TensorIoError::MalformedHeader(format!(
                "payload of {:?} overlaps earlier data",
                h.name
            )));
        }
        let numel = h
            .shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| {
                TensorIoError::MalformedHeader(format!("shape of {:?} overflows", h.name))
            })?;
        let nbytes = numel.checked_mul(h.dtype.size()).ok_or_else(|| {
            TensorIoError::MalformedHeader(format!("shape of {:?} overflows", h.name))
        })?;
        let end = offset
            .checked_add(nbytes)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| TensorIoError::TruncatedPayload(h.name.clone()))?;
        let raw = &bytes[offset..end];
        let data = match h.dtype {
            DType::F32 => TensorData::F32(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::F64 => TensorData::F64(
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        };
        min_offset = end;
        entries.push((
            h.name,
            Tensor {
                shape: h.shape,
                data,
            },
        ));
    }
    Ok(entries)
}
