//! Little-endian helpers for the binary artifact formats.

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

pub(crate) struct Writer(pub Vec<u8>);

impl Writer {
    pub fn new(magic: &[u8; 4]) -> Self {
        Writer(magic.to_vec())
    }

    pub fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.0.write_u32::<LittleEndian>(v).expect("vec write");
    }

    pub fn u64(&mut self, v: u64) {
        self.0.write_u64::<LittleEndian>(v).expect("vec write");
    }

    pub fn f32(&mut self, v: f32) {
        self.0.write_f32::<LittleEndian>(v).expect("vec write");
    }

    pub fn f64(&mut self, v: f64) {
        self.0.write_f64::<LittleEndian>(v).expect("vec write");
    }

    /// Writes f64 parameters narrowed to f32.
    pub fn f32s_from(&mut self, values: &[f64]) {
        self.0.reserve(values.len() * 4);
        for &v in values {
            self.f32(v as f32);
        }
    }
}

pub(crate) struct Reader<'a> {
    cur: Cursor<&'a [u8]>,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8], path: &'a Path, magic: &[u8; 4]) -> Result<Self> {
        let mut r = Reader {
            cur: Cursor::new(bytes),
            path,
        };
        let mut got = [0u8; 4];
        r.cur.read_exact(&mut got).map_err(|_| r.truncated())?;
        if &got != magic {
            return Err(Error::format(
                path,
                format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(&got), String::from_utf8_lossy(magic)),
            ));
        }
        Ok(r)
    }

    fn truncated(&self) -> Error {
        Error::format(self.path, "file truncated")
    }

    pub fn fail(&self, message: impl Into<String>) -> Error {
        Error::format(self.path, message)
    }

    pub fn u8(&mut self) -> Result<u8> {
        self.cur.read_u8().map_err(|_| self.truncated())
    }

    pub fn u32(&mut self) -> Result<u32> {
        self.cur.read_u32::<LittleEndian>().map_err(|_| self.truncated())
    }

    pub fn u64(&mut self) -> Result<u64> {
        self.cur.read_u64::<LittleEndian>().map_err(|_| self.truncated())
    }

    pub fn f64(&mut self) -> Result<f64> {
        self.cur.read_f64::<LittleEndian>().map_err(|_| self.truncated())
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let remaining = self.cur.get_ref().len() as u64 - self.cur.position();
        if remaining < n as u64 * 4 {
            return Err(self.truncated());
        }
        let mut out = vec![0f32; n];
        self.cur
            .read_f32_into::<LittleEndian>(&mut out)
            .map_err(|_| self.truncated())?;
        Ok(out)
    }

    pub fn f32s_widened(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self.f32s(n)?.into_iter().map(f64::from).collect())
    }

    pub fn finish(self) -> Result<()> {
        if self.cur.position() as usize != self.cur.get_ref().len() {
            return Err(Error::format(self.path, "trailing bytes after payload"));
        }
        Ok(())
    }
}
