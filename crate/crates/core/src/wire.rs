//! Little-endian, length-prefixed primitives shared by the NNM1, OBFB and NNT1
//! codecs.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("section `{section}` needs {needed} bytes but only {remaining} remain")]
    Truncated {
        section: &'static str,
        needed: u64,
        remaining: u64,
    },
    #[error("section `{section}` is not valid UTF-8")]
    BadUtf8 { section: &'static str },
}

#[derive(Default)]
pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn len_u32(&mut self, n: usize) {
        self.u32(u32::try_from(n).expect("length exceeds u32"));
    }

    pub fn str(&mut self, s: &str) {
        self.len_u32(s.len());
        self.bytes(s.as_bytes());
    }

    /// u32 count followed by u32 entries.
    pub fn u32_list(&mut self, items: &[u32]) {
        self.len_u32(items.len());
        for &i in items {
            self.u32(i);
        }
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    pub fn take(&mut self, n: u64, section: &'static str) -> Result<&'a [u8], WireError> {
        if n > self.remaining() as u64 {
            return Err(WireError::Truncated {
                section,
                needed: n,
                remaining: self.remaining() as u64,
            });
        }
        let n = n as usize;
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self, section: &'static str) -> Result<u8, WireError> {
        Ok(self.take(1, section)?[0])
    }

    pub fn u16(&mut self, section: &'static str) -> Result<u16, WireError> {
        let b = self.take(2, section)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    pub fn u32(&mut self, section: &'static str) -> Result<u32, WireError> {
        let b = self.take(4, section)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn u64(&mut self, section: &'static str) -> Result<u64, WireError> {
        let b = self.take(8, section)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    /// Reads a u32 element count and checks that `count * min_entry_size`
    /// bytes are still available, so a corrupt count cannot trigger a huge
    /// allocation.
    pub fn count(&mut self, min_entry_size: u64, section: &'static str) -> Result<usize, WireError> {
        let n = self.u32(section)? as u64;
        let needed = n.saturating_mul(min_entry_size);
        if needed > self.remaining() as u64 {
            return Err(WireError::Truncated {
                section,
                needed,
                remaining: self.remaining() as u64,
            });
        }
        Ok(n as usize)
    }

    pub fn str(&mut self, section: &'static str) -> Result<String, WireError> {
        let n = self.u32(section)? as u64;
        let b = self.take(n, section)?;
        String::from_utf8(b.to_vec()).map_err(|_| WireError::BadUtf8 { section })
    }

    pub fn u32_list(&mut self, section: &'static str) -> Result<Vec<u32>, WireError> {
        let n = self.count(4, section)?;
        (0..n).map(|_| self.u32(section)).collect()
    }
}
