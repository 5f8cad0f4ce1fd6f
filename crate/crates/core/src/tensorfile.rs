//! Little-endian tensor container shared by model-weight and filter-bank
//! files.
//!
//! Layout: 4 magic bytes, `u32` version, a format-specific fixed header,
//! `u32` tensor count, then per tensor: `u16` name length, UTF-8 name, `u8`
//! rank, `rank` x `u32` dims, and the row-major `f32` payload.

use std::io::{Read, Write};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::shape(format!(
                "tensor {name}: dims {dims:?} need {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { name, dims, data })
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

pub struct Writer<W: Write> {
    inner: W,
}

impl<W: Write> Writer<W> {
    pub fn new(mut inner: W, magic: &[u8; 4], version: u32) -> Result<Self> {
        inner.write_all(magic)?;
        inner.write_all(&version.to_le_bytes())?;
        Ok(Writer { inner })
    }

    pub fn u32(&mut self, v: u32) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    pub fn f64(&mut self, v: f64) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    pub fn tensors(mut self, tensors: &[Tensor]) -> Result<W> {
        self.u32(to_u32(tensors.len(), "tensor count")?)?;
        for t in tensors {
            let name = t.name.as_bytes();
            let len =
                u16::try_from(name.len()).map_err(|_| Error::format(format!("tensor name too long: {}", t.name)))?;
            self.inner.write_all(&len.to_le_bytes())?;
            self.inner.write_all(name)?;
            let rank =
                u8::try_from(t.dims.len()).map_err(|_| Error::format(format!("tensor {} rank too large", t.name)))?;
            self.inner.write_all(&[rank])?;
            for &d in &t.dims {
                self.u32(to_u32(d, "tensor dim")?)?;
            }
            let mut bytes = Vec::with_capacity(t.data.len() * 4);
            for v in &t.data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            self.inner.write_all(&bytes)?;
        }
        self.inner.flush()?;
        Ok(self.inner)
    }
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::format(format!("{what} {v} exceeds u32")))
}

pub struct Reader<R: Read> {
    inner: R,
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::format("truncated file")
    } else {
        Error::Io(e)
    }
}

impl<R: Read> Reader<R> {
    /// Checks magic and version before returning the reader.
    pub fn open(mut inner: R, magic: &[u8; 4], version: u32) -> Result<Self> {
        let mut m = [0u8; 4];
        inner.read_exact(&mut m).map_err(truncated)?;
        if &m != magic {
            return Err(Error::format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&m),
                String::from_utf8_lossy(magic)
            )));
        }
        let mut r = Reader { inner };
        let v = r.u32()?;
        if v != version {
            return Err(Error::format(format!("unsupported version {v}, expected {version}")));
        }
        Ok(r)
    }

    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner.read_exact(&mut b).map_err(truncated)?;
        Ok(b)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    pub fn tensors(mut self) -> Result<Vec<Tensor>> {
        let count = self.u32()? as usize;
        let mut out = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let len = u16::from_le_bytes(self.bytes()?) as usize;
            let mut name = vec![0u8; len];
            self.inner.read_exact(&mut name).map_err(truncated)?;
            let name = String::from_utf8(name).map_err(|_| Error::format("tensor name is not UTF-8"))?;
            let [rank] = self.bytes::<1>()?;
            let dims = (0..rank)
                .map(|_| self.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::format(format!("tensor {name} is too large")))?;
            let mut raw = vec![0u8; numel * 4];
            self.inner.read_exact(&mut raw).map_err(truncated)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            out.push(Tensor { name, dims, data });
        }
        let mut probe = [0u8; 1];
        if self.inner.read(&mut probe)? != 0 {
            return Err(Error::format("trailing bytes after last tensor"));
        }
        Ok(out)
    }
}
