//! Little-endian cursor shared by the binary file formats.

use crate::error::{Error, Result};
use crate::tensor::Real;

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(
                self.offset(),
                format!("truncated {what}: need {n} bytes, {} left", self.remaining()),
            ));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn magic(&mut self, expect: &[u8; 8]) -> Result<()> {
        let got = self.take(8, "magic")?;
        if got != expect {
            return Err(Error::format(
                0,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(expect)
                ),
            ));
        }
        Ok(())
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    /// A `u64` that must fit in memory as a count.
    pub fn count(&mut self, what: &str) -> Result<usize> {
        let at = self.offset();
        let v = self.u64(what)?;
        usize::try_from(v).map_err(|_| Error::format(at, format!("{what} {v} too large")))
    }

    pub fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn reals<T: Real>(&mut self, n: usize, what: &str) -> Result<Vec<T>> {
        let bytes_len = n
            .checked_mul(T::BYTES)
            .ok_or_else(|| Error::format(self.offset(), format!("{what} length overflows")))?;
        let bytes = self.take(bytes_len, what)?;
        Ok(bytes.chunks_exact(T::BYTES).map(T::read_le).collect())
    }
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}
