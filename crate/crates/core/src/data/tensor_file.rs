//! Self-describing little-endian tensor container.
//!
//! Layout:
//!
//! ```text
//! magic    8 bytes  "MAM2TNSR"
//! version  u16      currently 1
//! dtype    u16      1 = f32, 2 = f64, 3 = i64
//! rank     u16
//! extents  rank × u64
//! payload  product(extents) scalars, row-major
//! ```
//!
//! All integers and scalars are little-endian. A rank-0 tensor has one
//! payload element.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

pub const MAGIC: &[u8; 8] = b"MAM2TNSR";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 1,
    F64 = 2,
    I64 = 3,
}

impl DType {
    fn from_tag(tag: u16) -> Option<Self> {
        match tag {
            1 => Some(DType::F32),
            2 => Some(DType::F64),
            3 => Some(DType::I64),
            _ => None,
        }
    }

    pub fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 | DType::I64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorValues {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I64(Vec<i64>),
}

impl TensorValues {
    pub fn dtype(&self) -> DType {
        match self {
            TensorValues::F32(_) => DType::F32,
            TensorValues::F64(_) => DType::F64,
            TensorValues::I64(_) => DType::I64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorValues::F32(v) => v.len(),
            TensorValues::F64(v) => v.len(),
            TensorValues::I64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_f32(&self) -> Vec<f32> {
        match self {
            TensorValues::F32(v) => v.clone(),
            TensorValues::F64(v) => v.iter().map(|&x| x as f32).collect(),
            TensorValues::I64(v) => v.iter().map(|&x| x as f32).collect(),
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            TensorValues::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorValues::F64(v) => v.clone(),
            TensorValues::I64(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }
}

/// Shape plus typed payload, exactly as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorData {
    pub shape: Vec<usize>,
    pub values: TensorValues,
}

impl TensorData {
    pub fn from_tensor<F: Scalar>(t: &Tensor<F>) -> Self {
        let values = if F::NAME == "f64" {
            TensorValues::F64(t.data().iter().map(|v| v.as_f64()).collect())
        } else {
            TensorValues::F32(t.data().iter().map(|v| v.as_f64() as f32).collect())
        };
        TensorData { shape: t.shape().to_vec(), values }
    }

    pub fn to_tensor<F: Scalar>(&self) -> Result<Tensor<F>> {
        let data = self.values.to_f64().into_iter().map(F::of).collect();
        Tensor::new(&self.shape, data)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let count: usize = self.shape.iter().product();
        if count != self.values.len() {
            return Err(Error::Format {
                field: "payload",
                detail: format!("shape {:?} needs {count} values, have {}", self.shape, self.values.len()),
            });
        }
        let rank = u16::try_from(self.shape.len()).map_err(|_| Error::Format {
            field: "rank",
            detail: format!("rank {} exceeds u16", self.shape.len()),
        })?;
        let dtype = self.values.dtype();
        let mut buf = Vec::with_capacity(14 + 8 * self.shape.len() + count * dtype.width());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(dtype as u16).to_le_bytes());
        buf.extend_from_slice(&rank.to_le_bytes());
        for &d in &self.shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &self.values {
            TensorValues::F32(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
            TensorValues::F64(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
            TensorValues::I64(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
        }
        Ok(buf)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8, "magic")?;
        if magic != MAGIC {
            return Err(Error::Format { field: "magic", detail: format!("expected MAM2TNSR, found {magic:?}") });
        }
        let version = r.u16("version")?;
        if version != VERSION {
            return Err(Error::Format { field: "version", detail: format!("unsupported version {version}") });
        }
        let tag = r.u16("dtype")?;
        let dtype = DType::from_tag(tag)
            .ok_or_else(|| Error::Format { field: "dtype", detail: format!("unknown dtype tag {tag}") })?;
        let rank = r.u16("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut count: usize = 1;
        for _ in 0..rank {
            let d = r.u64("extents")?;
            let d = usize::try_from(d)
                .map_err(|_| Error::Format { field: "extents", detail: format!("extent {d} too large") })?;
            count = count
                .checked_mul(d)
                .ok_or_else(|| Error::Format { field: "extents", detail: "element count overflows".into() })?;
            shape.push(d);
        }
        let need = count
            .checked_mul(dtype.width())
            .ok_or_else(|| Error::Format { field: "extents", detail: "payload size overflows".into() })?;
        let remaining = bytes.len() - r.pos;
        if remaining != need {
            return Err(Error::Format {
                field: "payload",
                detail: format!("expected {need} bytes for shape {shape:?}, found {remaining}"),
            });
        }
        let payload = &bytes[r.pos..];
        let values = match dtype {
            DType::F32 => TensorValues::F32(
                payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
            ),
            DType::F64 => TensorValues::F64(
                payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
            ),
            DType::I64 => TensorValues::I64(
                payload.chunks_exact(8).map(|c| i64::from_le_bytes(c.try_into().unwrap())).collect(),
            ),
        };
        Ok(TensorData { shape, values })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format { field, detail: "file truncated".into() });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, field: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, field)?.try_into().unwrap()))
    }

    fn u64(&mut self, field: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }
}

pub fn write_tensor(path: impl AsRef<Path>, data: &TensorData) -> Result<()> {
    let bytes = data.encode()?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<TensorData> {
    TensorData::decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_fixed() {
        let d = TensorData { shape: vec![2], values: TensorValues::F32(vec![1.0, -2.0]) };
        let b = d.encode().unwrap();
        assert_eq!(&b[..8], b"MAM2TNSR");
        assert_eq!(&b[8..14], &[1, 0, 1, 0, 1, 0]);
        assert_eq!(&b[14..22], &2u64.to_le_bytes());
        assert_eq!(&b[22..26], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 30);
    }

    #[test]
    fn scalar_roundtrip() {
        let d = TensorData { shape: vec![], values: TensorValues::F64(vec![std::f64::consts::PI]) };
        assert_eq!(TensorData::decode(&d.encode().unwrap()).unwrap(), d);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let d = TensorData { shape: vec![3], values: TensorValues::I64(vec![1, 2, 3]) };
        let b = d.encode().unwrap();
        match TensorData::decode(&b[..b.len() - 1]) {
            Err(Error::Format { field, .. }) => assert_eq!(field, "payload"),
            other => panic!("{other:?}"),
        }
        match TensorData::decode(&b[..11]) {
            Err(Error::Format { field, .. }) => assert_eq!(field, "dtype"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let d = TensorData { shape: vec![1], values: TensorValues::F32(vec![0.5]) };
        let mut b = d.encode().unwrap();
        b[9] = 7;
        assert!(matches!(TensorData::decode(&b), Err(Error::Format { field: "version", .. })));
        b[0] = b'X';
        assert!(matches!(TensorData::decode(&b), Err(Error::Format { field: "magic", .. })));
    }
}
