//! Big-endian cursor over a byte slice that remembers absolute file offsets.

use crate::fourcc::FourCC;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Truncated {
    /// Absolute offset at which the read was attempted.
    pub offset: u64,
    pub wanted: usize,
}

pub(crate) type ReadResult<T> = Result<T, Truncated>;

#[derive(Debug, Clone)]
pub(crate) struct ByteReader<'a> {
    data: &'a [u8],
    pos: usize,
    base: u64,
}

impl<'a> ByteReader<'a> {
    /// `base` is the absolute offset of `data[0]` in the file.
    pub fn new(data: &'a [u8], base: u64) -> Self {
        ByteReader { data, pos: 0, base }
    }

    pub fn position(&self) -> u64 {
        self.base + self.pos as u64
    }

    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.remaining() == 0
    }

    pub fn bytes(&mut self, n: usize) -> ReadResult<&'a [u8]> {
        if self.remaining() < n {
            return Err(Truncated {
                offset: self.position(),
                wanted: n,
            });
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn rest(&mut self) -> &'a [u8] {
        let out = &self.data[self.pos..];
        self.pos = self.data.len();
        out
    }

    pub fn skip(&mut self, n: usize) -> ReadResult<()> {
        self.bytes(n).map(|_| ())
    }

    pub fn u8(&mut self) -> ReadResult<u8> {
        Ok(self.bytes(1)?[0])
    }

    pub fn u16(&mut self) -> ReadResult<u16> {
        let b = self.bytes(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    pub fn u24(&mut self) -> ReadResult<u32> {
        let b = self.bytes(3)?;
        Ok(u32::from_be_bytes([0, b[0], b[1], b[2]]))
    }

    pub fn u32(&mut self) -> ReadResult<u32> {
        let b = self.bytes(4)?;
        Ok(u32::from_be_bytes(b.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> ReadResult<u64> {
        let b = self.bytes(8)?;
        Ok(u64::from_be_bytes(b.try_into().unwrap()))
    }

    /// Unsigned integer of 0, 4 or 8 bytes (iloc-style variable width).
    pub fn uint(&mut self, width: u8) -> ReadResult<u64> {
        match width {
            0 => Ok(0),
            4 => self.u32().map(u64::from),
            8 => self.u64(),
            2 => self.u16().map(u64::from),
            1 => self.u8().map(u64::from),
            _ => unreachable!("width validated by caller"),
        }
    }

    pub fn fourcc(&mut self) -> ReadResult<FourCC> {
        Ok(FourCC::from_slice(self.bytes(4)?).unwrap())
    }

    /// Null-terminated string. A missing terminator consumes the rest of the
    /// data; invalid UTF-8 is replaced lossily.
    pub fn c_string(&mut self) -> String {
        let rest = &self.data[self.pos..];
        match rest.iter().position(|&b| b == 0) {
            Some(n) => {
                self.pos += n + 1;
                String::from_utf8_lossy(&rest[..n]).into_owned()
            }
            None => {
                self.pos = self.data.len();
                String::from_utf8_lossy(rest).into_owned()
            }
        }
    }
}

pub(crate) fn be_u32(bytes: &[u8], at: usize) -> Option<u32> {
    Some(u32::from_be_bytes(bytes.get(at..at + 4)?.try_into().ok()?))
}

pub(crate) fn be_u64(bytes: &[u8], at: usize) -> Option<u64> {
    Some(u64::from_be_bytes(bytes.get(at..at + 8)?.try_into().ok()?))
}
