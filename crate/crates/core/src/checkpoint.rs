//! Binary parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes
//! header_len   u32
//! header       header_len bytes of UTF-8 JSON
//! blob_count   u32
//! per blob:    u16 name_len, name (UTF-8), u8 ndim, ndim × u32 extents,
//!              product(extents) × f64
//! ```
//!
//! Values are stored as raw IEEE-754 bits, so a write/read round trip is exact.

use std::fs;
use std::path::Path;

use crate::error::{Result, TseError};
use crate::tensor::Tensor;

pub const SEPARATOR_MAGIC: &[u8; 8] = b"TSECKPT1";
pub const EMBEDDER_MAGIC: &[u8; 8] = b"TSEEMBM1";

#[derive(Debug)]
pub struct Container {
    pub header: String,
    pub blobs: Vec<(String, Tensor)>,
}

pub fn encode<'a>(magic: &[u8; 8], header: &str, blobs: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(magic);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    let blobs: Vec<_> = blobs.into_iter().collect();
    out.extend_from_slice(&(blobs.len() as u32).to_le_bytes());
    for (name, t) in blobs {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.ndim() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(TseError::format(self.path, field, "file truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8], magic: &[u8; 8], path: &str) -> Result<Container> {
    let mut c = Cursor { buf: bytes, pos: 0, path };
    let m = c.take(8, "magic")?;
    if m != magic {
        return Err(TseError::format(
            path,
            "magic",
            format!("expected {:?}, found {:?}", String::from_utf8_lossy(magic), String::from_utf8_lossy(m)),
        ));
    }
    let hlen = c.u32("header_len")? as usize;
    let header = std::str::from_utf8(c.take(hlen, "header")?)
        .map_err(|e| TseError::format(path, "header", e.to_string()))?
        .to_string();
    let count = c.u32("blob_count")? as usize;
    let mut blobs = Vec::with_capacity(count);
    for _ in 0..count {
        let nlen = u16::from_le_bytes(c.take(2, "name_len")?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(c.take(nlen, "name")?)
            .map_err(|e| TseError::format(path, "name", e.to_string()))?
            .to_string();
        let ndim = c.take(1, "ndim")?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(c.u32("extent")? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = c.take(n * 8, &format!("values of {name}"))?;
        let data = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        let t = Tensor::new(shape, data).map_err(|e| TseError::format(path, name.clone(), e.to_string()))?;
        blobs.push((name, t));
    }
    if c.pos != bytes.len() {
        return Err(TseError::format(path, "trailer", format!("{} unexpected trailing bytes", bytes.len() - c.pos)));
    }
    Ok(Container { header, blobs })
}

pub fn write_file<'a>(path: &Path, magic: &[u8; 8], header: &str, blobs: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Result<()> {
    fs::write(path, encode(magic, header, blobs)).map_err(|e| TseError::io(path, e))
}

pub fn read_file(path: &Path, magic: &[u8; 8]) -> Result<Container> {
    let bytes = fs::read(path).map_err(|e| TseError::io(path, e))?;
    decode(&bytes, magic, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let a = Tensor::new(vec![2, 3], vec![0.1, -2.5e-300, f64::MAX, 1.0 / 3.0, -0.0, 7.0]).unwrap();
        let b = Tensor::scalar(std::f64::consts::PI);
        let bytes = encode(SEPARATOR_MAGIC, "{\"k\":1}", [("a", &a), ("b", &b)]);
        let c = decode(&bytes, SEPARATOR_MAGIC, "mem").unwrap();
        assert_eq!(c.header, "{\"k\":1}");
        assert_eq!(c.blobs[0].0, "a");
        for (x, y) in c.blobs[0].1.data().iter().zip(a.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(c.blobs[1].1, b);
    }

    #[test]
    fn wrong_magic_and_truncation_rejected() {
        let a = Tensor::vector(vec![1.0, 2.0]);
        let bytes = encode(SEPARATOR_MAGIC, "{}", [("a", &a)]);
        assert!(decode(&bytes, EMBEDDER_MAGIC, "mem").is_err());
        let err = decode(&bytes[..bytes.len() - 3], SEPARATOR_MAGIC, "mem").unwrap_err();
        assert!(err.to_string().contains("truncated"));
    }
}
