//! Little-endian read/write helpers shared by the frame and bundle codecs.

use super::WireError;

pub(crate) struct Sink {
    buf: Vec<u8>,
}

impl Sink {
    pub fn with_capacity(n: usize) -> Self {
        Self { buf: Vec::with_capacity(n) }
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.buf
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

    pub fn i32(&mut self, v: i32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32s(&mut self, v: &[f32]) {
        self.buf.reserve(v.len() * 4);
        for x in v {
            self.f32(*x);
        }
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    /// u8 length prefix.
    pub fn short_str(&mut self, s: &str) -> Result<(), WireError> {
        let n = u8::try_from(s.len()).map_err(|_| WireError::Oversize(s.len()))?;
        self.u8(n);
        self.bytes(s.as_bytes());
        Ok(())
    }

    /// u16 length prefix.
    pub fn str16(&mut self, s: &str) -> Result<(), WireError> {
        let n = u16::try_from(s.len()).map_err(|_| WireError::Oversize(s.len()))?;
        self.u16(n);
        self.bytes(s.as_bytes());
        Ok(())
    }
}

/// Bounds-checked reader over a fully received payload.
pub(crate) struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn ensure(&self, n: usize) -> Result<(), WireError> {
        if n > self.remaining() {
            return Err(WireError::Malformed(format!("need {n} bytes, {} left", self.remaining())));
        }
        Ok(())
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        self.ensure(n)?;
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], WireError> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    pub fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    pub fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn i32(&mut self) -> Result<i32, WireError> {
        Ok(i32::from_le_bytes(self.array()?))
    }

    pub fn f32(&mut self) -> Result<f32, WireError> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    pub fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>, WireError> {
        let raw = self.take(n.checked_mul(4).ok_or(WireError::malformed("length overflow"))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn utf8(raw: &[u8]) -> Result<String, WireError> {
        String::from_utf8(raw.to_vec()).map_err(|_| WireError::malformed("invalid UTF-8"))
    }

    pub fn short_str(&mut self) -> Result<String, WireError> {
        let n = self.u8()? as usize;
        Self::utf8(self.take(n)?)
    }

    pub fn str16(&mut self) -> Result<String, WireError> {
        let n = self.u16()? as usize;
        Self::utf8(self.take(n)?)
    }

    pub fn finish(&self) -> Result<(), WireError> {
        if self.remaining() != 0 {
            return Err(WireError::Malformed(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}
