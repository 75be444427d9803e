//! Little-endian record helpers shared by the on-disk formats.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use byteorder::{ByteOrder, LittleEndian as LE, WriteBytesExt};

use crate::error::{Error, Result};

pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Writer { buf: Vec::new() }
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.write_u16::<LE>(v).unwrap();
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.write_u32::<LE>(v).unwrap();
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.write_u64::<LE>(v).unwrap();
    }

    pub fn f32(&mut self, v: f32) {
        self.buf.write_f32::<LE>(v).unwrap();
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.write_f64::<LE>(v).unwrap();
    }

    pub fn bits(&mut self, bits: &[bool]) {
        self.bytes(&pack_bits(bits));
    }

    pub fn finish(self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.buf).map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

pub(crate) struct Reader {
    path: PathBuf,
    buf: Vec<u8>,
    pos: usize,
}

impl Reader {
    pub fn open(path: &Path) -> Result<Self> {
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Reader {
            path: path.to_path_buf(),
            buf,
            pos: 0,
        })
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &dyn Fn() -> String) -> Result<&[u8]> {
        if self.remaining() < n {
            return Err(Error::Truncated {
                path: self.path.clone(),
                what: what(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn magic(&mut self, expected: &[u8]) -> Result<()> {
        let got = self.take(expected.len(), &|| "header".into())?;
        if got != expected {
            return Err(Error::BadMagic {
                path: self.path.clone(),
                expected: String::from_utf8_lossy(expected).into_owned(),
            });
        }
        Ok(())
    }

    pub fn version(&mut self, expected: u32) -> Result<()> {
        let found = self.u32("header")?;
        if found != expected {
            return Err(Error::Version {
                path: self.path.clone(),
                found,
                expected,
            });
        }
        Ok(())
    }

    pub fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        Ok(self.take(n, &|| what.to_string())?.to_vec())
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, &|| what.to_string())?[0])
    }

    pub fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(LE::read_u16(self.take(2, &|| what.to_string())?))
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(LE::read_u32(self.take(4, &|| what.to_string())?))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(LE::read_u64(self.take(8, &|| what.to_string())?))
    }

    pub fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.take(4 * n, &|| what.to_string())?;
        let mut out = vec![0f32; n];
        LE::read_f32_into(raw, &mut out);
        Ok(out)
    }

    pub fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(8 * n, &|| what.to_string())?;
        let mut out = vec![0f64; n];
        LE::read_f64_into(raw, &mut out);
        Ok(out)
    }

    pub fn bits(&mut self, n: usize, what: &str) -> Result<Vec<bool>> {
        let raw = self.take(n.div_ceil(8), &|| what.to_string())?;
        Ok(unpack_bits(raw, n))
    }

    pub fn malformed(&self, what: impl Into<String>) -> Error {
        Error::Malformed {
            path: self.path.clone(),
            what: what.into(),
        }
    }

    pub fn expect_end(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(self.malformed(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

/// LSB-first bit packing: bit `i` lives in byte `i / 8` at position `i % 8`.
pub(crate) fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

pub(crate) fn unpack_bits(raw: &[u8], n: usize) -> Vec<bool> {
    (0..n).map(|i| raw[i / 8] & (1 << (i % 8)) != 0).collect()
}

pub(crate) fn to_u16(v: usize, what: &str) -> Result<u16> {
    u16::try_from(v).map_err(|_| Error::InvalidArgument(format!("{what} = {v} does not fit in u16")))
}

pub(crate) fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{what} = {v} does not fit in u32")))
}
