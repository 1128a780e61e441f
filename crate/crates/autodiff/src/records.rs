//! Little-endian named tensor records: `u32 name_len, name, u32 ndim,
//! ndim x u32 dims, f32 payload`.

use std::io::{self, Read, Write};

use crate::scalar::Scalar;
use crate::tensor::{Tensor, MAX_AXES};

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

impl Record {
    pub fn from_tensor<T: Scalar>(name: &str, t: &Tensor<T>) -> Self {
        Self {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            values: t.data().iter().map(|v| v.as_f32()).collect(),
        }
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::new(&self.shape, self.values.iter().map(|&v| T::of(v as f64)).collect())
            .expect("record shape validated on read")
    }

    pub fn write<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(&(self.name.len() as u32).to_le_bytes())?;
        w.write_all(self.name.as_bytes())?;
        w.write_all(&(self.shape.len() as u32).to_le_bytes())?;
        for &d in &self.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

/// Reader that tracks its byte offset for error messages.
pub struct OffsetReader<R> {
    inner: R,
    pub offset: u64,
}

#[derive(Debug)]
pub struct ReadError {
    pub offset: u64,
    pub message: String,
}

impl<R: Read> OffsetReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, offset: 0 }
    }

    fn fail(&self, message: impl Into<String>) -> ReadError {
        ReadError {
            offset: self.offset,
            message: message.into(),
        }
    }

    pub fn bytes<const N: usize>(&mut self) -> Result<[u8; N], ReadError> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| self.fail(format!("truncated: {e}")))?;
        self.offset += N as u64;
        Ok(buf)
    }

    pub fn u32(&mut self) -> Result<u32, ReadError> {
        Ok(u32::from_le_bytes(self.bytes::<4>()?))
    }

    pub fn f32(&mut self) -> Result<f32, ReadError> {
        Ok(f32::from_le_bytes(self.bytes::<4>()?))
    }

    pub fn f64(&mut self) -> Result<f64, ReadError> {
        Ok(f64::from_le_bytes(self.bytes::<8>()?))
    }

    pub fn vec(&mut self, n: usize) -> Result<Vec<u8>, ReadError> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| self.fail(format!("truncated: {e}")))?;
        self.offset += n as u64;
        Ok(buf)
    }

    pub fn at_eof(&mut self) -> Result<bool, ReadError> {
        let mut probe = [0u8; 1];
        match self.inner.read(&mut probe) {
            Ok(0) => Ok(true),
            Ok(_) => Ok(false),
            Err(e) => Err(self.fail(e.to_string())),
        }
    }

    pub fn record(&mut self) -> Result<Record, ReadError> {
        let start = self.offset;
        let name_len = self.u32()? as usize;
        if name_len > 4096 {
            return Err(ReadError {
                offset: start,
                message: format!("implausible record name length {name_len}"),
            });
        }
        let name = String::from_utf8(self.vec(name_len)?).map_err(|_| ReadError {
            offset: start + 4,
            message: "record name is not UTF-8".into(),
        })?;
        let ndim = self.u32()? as usize;
        if ndim > MAX_AXES {
            return Err(self.fail(format!("record `{name}` has {ndim} axes")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(self.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        if n > (1 << 28) {
            return Err(self.fail(format!("record `{name}` too large")));
        }
        let raw = self.vec(n * 4)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Record { name, shape, values })
    }
}
