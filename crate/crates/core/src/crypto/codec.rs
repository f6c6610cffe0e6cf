//! Length-prefixed binary encoding shared by keys, ciphertexts, shares,
//! and protocol wire messages: a one-byte version tag followed by
//! u32-length-prefixed blocks.

use super::CryptoError;

pub const WIRE_VERSION: u8 = 1;

#[derive(Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        let mut w = Writer { buf: Vec::new() };
        w.buf.push(WIRE_VERSION);
        w
    }

    pub fn put_block(&mut self, bytes: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
        self.buf.extend_from_slice(bytes);
        self
    }

    pub fn put_u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn put_u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn put_u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Opens a buffer, checking the version tag.
    pub fn new(buf: &'a [u8]) -> Result<Self, CryptoError> {
        if buf.is_empty() {
            return Err(CryptoError::Codec("empty buffer".into()));
        }
        if buf[0] != WIRE_VERSION {
            return Err(CryptoError::Codec(format!("unsupported version {}", buf[0])));
        }
        Ok(Reader { buf, pos: 1 })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CryptoError> {
        if self.pos + n > self.buf.len() {
            return Err(CryptoError::Codec("truncated buffer".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn get_block(&mut self) -> Result<&'a [u8], CryptoError> {
        let len = u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize;
        self.take(len)
    }

    pub fn get_u8(&mut self) -> Result<u8, CryptoError> {
        Ok(self.take(1)?[0])
    }

    pub fn get_u32(&mut self) -> Result<u32, CryptoError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn get_u64(&mut self) -> Result<u64, CryptoError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn expect_end(&self) -> Result<(), CryptoError> {
        if self.remaining() != 0 {
            return Err(CryptoError::Codec("trailing bytes".into()));
        }
        Ok(())
    }
}
