//! Flat binary checkpoint format shared by the trainable models.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  b"MGCKPT\0\n"
//! version      u32      = 1
//! kind         str      (u32 byte length + UTF-8)
//! n_meta       u32
//!   key        str
//!   value      str
//! n_tensors    u32
//!   name       str
//!   ndim       u32
//!   dims       u64 x ndim
//!   data       f64 x prod(dims), row-major, IEEE-754 bits
//! ```
//!
//! Values are stored as raw bits so save -> load is bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MGCKPT\0\n";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            meta: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    pub fn push_tensor(&mut self, name: &str, shape: &[usize], data: &[f64]) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.tensors.push(Tensor {
            name: name.to_string(),
            shape: shape.to_vec(),
            data: data.to_vec(),
        });
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Checkpoint(format!("missing metadata key `{key}`")))
    }

    pub fn meta_usize(&self, key: &str) -> Result<usize> {
        let v = self.meta(key)?;
        v.parse()
            .map_err(|_| Error::Checkpoint(format!("metadata `{key}` = `{v}` is not an integer")))
    }

    /// Tensor by name, checked against the expected shape.
    pub fn tensor(&self, name: &str, shape: &[usize]) -> Result<&[f64]> {
        let t = self
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
        if t.shape != shape {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` has shape {:?}, expected {shape:?}",
                t.shape
            )));
        }
        if let Some(pos) = t.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Checkpoint(format!("tensor `{name}` has non-finite entry {pos}")));
        }
        Ok(&t.data)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::Checkpoint(format!(
                "checkpoint holds `{}`, expected `{kind}`",
                self.kind
            )))
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.kind);
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            put_str(&mut out, &t.name);
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic header".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let kind = r.string()?;
        let n_meta = r.u32()? as usize;
        let mut meta = Vec::new();
        for _ in 0..n_meta {
            let k = r.string()?;
            let v = r.string()?;
            meta.push((k, v));
        }
        let n_tensors = r.u32()? as usize;
        let mut tensors = Vec::new();
        for _ in 0..n_tensors {
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim.min(8));
            let mut count: usize = 1;
            for _ in 0..ndim {
                let d = usize::try_from(r.u64()?)
                    .map_err(|_| Error::Checkpoint("dimension overflows usize".into()))?;
                count = count
                    .checked_mul(d)
                    .ok_or_else(|| Error::Checkpoint("tensor size overflow".into()))?;
                shape.push(d);
            }
            let nbytes = count
                .checked_mul(8)
                .ok_or_else(|| Error::Checkpoint("tensor size overflow".into()))?;
            let raw = r.take(nbytes)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().unwrap())))
                .collect();
            tensors.push(Tensor { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after last tensor",
                bytes.len() - r.pos
            )));
        }
        Ok(Self { kind, meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Checkpoint(format!("truncated checkpoint at byte {}", self.pos))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| Error::Checkpoint(format!("invalid UTF-8 before byte {}", self.pos)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new("test").with_meta("rows", 2);
        c.push_tensor("w", &[2, 3], &[1.0, -0.0, 3.5, f64::MIN_POSITIVE, 1e300, -7.25]);
        c.push_tensor("b", &[0], &[]);
        c
    }

    #[test]
    fn header_and_errors() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        let c = Checkpoint::from_bytes(&bytes).unwrap();
        assert!(c.tensor("w", &[3, 2]).is_err());
        assert!(c.tensor("missing", &[1]).is_err());
        assert_eq!(c.meta_usize("rows").unwrap(), 2);
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(bits in proptest::collection::vec(any::<u64>(), 0..40), name in "[a-z]{1,8}") {
            let data: Vec<f64> = bits.iter().map(|b| f64::from_bits(*b)).collect();
            let mut c = Checkpoint::new(name.clone()).with_meta("k", &name);
            c.push_tensor(&name, &[data.len()], &data);
            let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
            let got: Vec<u64> = back.tensors[0].data.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(got, bits);
            prop_assert_eq!(back.to_bytes(), c.to_bytes());
        }

        #[test]
        fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
            let _ = Checkpoint::from_bytes(&bytes);
        }
    }
}
