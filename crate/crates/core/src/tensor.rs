//! Dense tensors and the ETF container.
//!
//! Layout of an ETF file, all integers little-endian:
//!
//! ```text
//! "ETF1" | dtype: u8 (0 = f32, 1 = u8) | rank: u8 | rank x u64 dims | row-major scalars
//! ```

use std::fs;
use std::path::Path;

use thiserror::Error;

pub const ETF_MAGIC: &[u8; 4] = b"ETF1";
pub const MAX_RANK: usize = 4;

#[derive(Debug, Error)]
pub enum EtfError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("truncated: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),
    #[error("rank {0} outside 1..=4")]
    BadRank(usize),
    #[error("zero-sized dimension in shape {0:?}")]
    ZeroDim(Vec<usize>),
    #[error("shape {shape:?} holds {expected} scalars but data has {got}")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    U8,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::U8 => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, EtfError> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::U8),
            other => Err(EtfError::UnknownDtype(other)),
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl TensorData {
    fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }
}

/// Row-major n-dimensional array of rank 1 to 4.
///
/// Equality on f32 data compares bit patterns, so NaN payloads round-trip
/// and compare equal.
#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: TensorData,
}

impl PartialEq for Tensor {
    fn eq(&self, other: &Self) -> bool {
        if self.shape != other.shape {
            return false;
        }
        match (&self.data, &other.data) {
            (TensorData::F32(a), TensorData::F32(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (TensorData::U8(a), TensorData::U8(b)) => a == b,
            _ => false,
        }
    }
}

fn check_shape(shape: &[usize], len: usize) -> Result<(), EtfError> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(EtfError::BadRank(shape.len()));
    }
    if shape.contains(&0) {
        return Err(EtfError::ZeroDim(shape.to_vec()));
    }
    let expected = shape.iter().product::<usize>();
    if expected != len {
        return Err(EtfError::LengthMismatch {
            shape: shape.to_vec(),
            expected,
            got: len,
        });
    }
    Ok(())
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self, EtfError> {
        check_shape(&shape, data.len())?;
        Ok(Self { shape, data })
    }

    pub fn from_f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, EtfError> {
        Self::new(shape, TensorData::F32(data))
    }

    pub fn from_u8(shape: Vec<usize>, data: Vec<u8>) -> Result<Self, EtfError> {
        Self::new(shape, TensorData::U8(data))
    }

    pub fn zeros_f32(shape: Vec<usize>) -> Result<Self, EtfError> {
        let n = shape.iter().product();
        Self::from_f32(shape, vec![0.0; n])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self.data {
            TensorData::F32(_) => DType::F32,
            TensorData::U8(_) => DType::U8,
        }
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Some(v),
            TensorData::U8(_) => None,
        }
    }

    pub fn as_u8(&self) -> Option<&[u8]> {
        match &self.data {
            TensorData::U8(v) => Some(v),
            TensorData::F32(_) => None,
        }
    }

    pub fn into_f32(self) -> Option<Vec<f32>> {
        match self.data {
            TensorData::F32(v) => Some(v),
            TensorData::U8(_) => None,
        }
    }

    /// Serialized size in bytes.
    pub fn encoded_len(&self) -> usize {
        4 + 1 + 1 + 8 * self.rank() + self.dtype().size() * self.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(ETF_MAGIC);
        out.push(self.dtype().code());
        out.push(self.rank() as u8);
        for &dim in &self.shape {
            out.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            TensorData::U8(v) => out.extend_from_slice(v),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EtfError> {
        let need = |needed: usize| -> Result<(), EtfError> {
            if bytes.len() < needed {
                Err(EtfError::Truncated {
                    needed,
                    available: bytes.len(),
                })
            } else {
                Ok(())
            }
        };
        need(4)?;
        let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
        if &magic != ETF_MAGIC {
            return Err(EtfError::BadMagic(magic));
        }
        need(6)?;
        let dtype = DType::from_code(bytes[4])?;
        let rank = bytes[5] as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(EtfError::BadRank(rank));
        }
        let header = 6 + 8 * rank;
        need(header)?;
        let mut shape = Vec::with_capacity(rank);
        for i in 0..rank {
            let at = 6 + 8 * i;
            let dim = u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
            let dim = usize::try_from(dim).map_err(|_| EtfError::Truncated {
                needed: usize::MAX,
                available: bytes.len(),
            })?;
            shape.push(dim);
        }
        if shape.contains(&0) {
            return Err(EtfError::ZeroDim(shape));
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(dtype.size()));
        let payload = count.ok_or(EtfError::Truncated {
            needed: usize::MAX,
            available: bytes.len(),
        })?;
        need(header + payload)?;
        let body = &bytes[header..header + payload];
        if bytes.len() > header + payload {
            return Err(EtfError::TrailingBytes(bytes.len() - header - payload));
        }
        let data = match dtype {
            DType::F32 => TensorData::F32(
                body.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
            ),
            DType::U8 => TensorData::U8(body.to_vec()),
        };
        Tensor::new(shape, data)
    }
}

pub fn write_etf(tensor: &Tensor, path: impl AsRef<Path>) -> Result<(), EtfError> {
    fs::write(path, tensor.to_bytes())?;
    Ok(())
}

pub fn read_etf(path: impl AsRef<Path>) -> Result<Tensor, EtfError> {
    let bytes = fs::read(path)?;
    Tensor::from_bytes(&bytes)
}
