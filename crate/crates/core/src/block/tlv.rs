//! Tag-length-value primitives behind the baseline block encoding.
//!
//! Every field is `tag: u8 | length: u32 (big-endian) | value`. Nested
//! messages are fields whose value is itself a TLV sequence.

use thiserror::Error;

pub const TLV_HEADER_LEN: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeErrorKind {
    Truncated,
    UnexpectedTag { expected: u8, found: u8 },
    BadLength { tag: u8, expected: usize, found: usize },
    TrailingBytes,
    InvalidUtf8,
    Invalid(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("decode error at byte {offset}: {kind:?}")]
pub struct DecodeError {
    pub offset: usize,
    pub kind: DecodeErrorKind,
}

#[derive(Default)]
pub struct TlvWriter {
    buf: Vec<u8>,
}

impl TlvWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(cap: usize) -> Self {
        TlvWriter {
            buf: Vec::with_capacity(cap),
        }
    }

    pub fn field(&mut self, tag: u8, value: &[u8]) -> &mut Self {
        self.buf.push(tag);
        self.buf.extend_from_slice(&(value.len() as u32).to_be_bytes());
        self.buf.extend_from_slice(value);
        self
    }

    pub fn u16(&mut self, tag: u8, v: u16) -> &mut Self {
        self.field(tag, &v.to_be_bytes())
    }

    pub fn u32(&mut self, tag: u8, v: u32) -> &mut Self {
        self.field(tag, &v.to_be_bytes())
    }

    pub fn u64(&mut self, tag: u8, v: u64) -> &mut Self {
        self.field(tag, &v.to_be_bytes())
    }

    pub fn nested(&mut self, tag: u8, body: impl FnOnce(&mut TlvWriter)) -> &mut Self {
        self.buf.push(tag);
        let len_at = self.buf.len();
        self.buf.extend_from_slice(&[0; 4]);
        body(self);
        let len = (self.buf.len() - len_at - 4) as u32;
        self.buf[len_at..len_at + 4].copy_from_slice(&len.to_be_bytes());
        self
    }

    pub fn raw(&mut self, bytes: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(bytes);
        self
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

/// A decoded field: its tag, the absolute offset of its first (tag) byte,
/// and the value slice.
#[derive(Debug, Clone, Copy)]
pub struct Field<'a> {
    pub tag: u8,
    pub start: usize,
    pub value: &'a [u8],
}

impl<'a> Field<'a> {
    /// Absolute offset of the value.
    pub fn value_offset(&self) -> usize {
        self.start + TLV_HEADER_LEN
    }

    pub fn end(&self) -> usize {
        self.value_offset() + self.value.len()
    }

    pub fn reader(&self) -> TlvReader<'a> {
        TlvReader::at(self.value, self.value_offset())
    }
}

/// Sequential reader over a TLV sequence. Offsets in errors and fields are
/// absolute with respect to the outermost buffer.
#[derive(Debug, Clone)]
pub struct TlvReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> TlvReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self::at(bytes, 0)
    }

    pub fn at(bytes: &'a [u8], base: usize) -> Self {
        TlvReader { bytes, pos: 0, base }
    }

    pub fn offset(&self) -> usize {
        self.base + self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.pos == self.bytes.len()
    }

    pub fn err(&self, kind: DecodeErrorKind) -> DecodeError {
        DecodeError {
            offset: self.offset(),
            kind,
        }
    }

    pub fn peek_tag(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    pub fn next_field(&mut self) -> Result<Field<'a>, DecodeError> {
        let start = self.pos;
        if self.bytes.len() - start < TLV_HEADER_LEN {
            return Err(self.err(DecodeErrorKind::Truncated));
        }
        let tag = self.bytes[start];
        let len = u32::from_be_bytes(self.bytes[start + 1..start + 5].try_into().unwrap()) as usize;
        let value_start = start + TLV_HEADER_LEN;
        if self.bytes.len() - value_start < len {
            return Err(DecodeError {
                offset: self.base + start + 1,
                kind: DecodeErrorKind::Truncated,
            });
        }
        self.pos = value_start + len;
        Ok(Field {
            tag,
            start: self.base + start,
            value: &self.bytes[value_start..value_start + len],
        })
    }

    pub fn expect(&mut self, tag: u8) -> Result<Field<'a>, DecodeError> {
        let at = self.offset();
        match self.peek_tag() {
            None => Err(self.err(DecodeErrorKind::Truncated)),
            Some(found) if found != tag => Err(DecodeError {
                offset: at,
                kind: DecodeErrorKind::UnexpectedTag {
                    expected: tag,
                    found,
                },
            }),
            Some(_) => self.next_field(),
        }
    }

    pub fn expect_fixed<const N: usize>(&mut self, tag: u8) -> Result<[u8; N], DecodeError> {
        let f = self.expect(tag)?;
        f.value.try_into().map_err(|_| DecodeError {
            offset: f.start,
            kind: DecodeErrorKind::BadLength {
                tag,
                expected: N,
                found: f.value.len(),
            },
        })
    }

    pub fn expect_u16(&mut self, tag: u8) -> Result<u16, DecodeError> {
        self.expect_fixed::<2>(tag).map(u16::from_be_bytes)
    }

    pub fn expect_u32(&mut self, tag: u8) -> Result<u32, DecodeError> {
        self.expect_fixed::<4>(tag).map(u32::from_be_bytes)
    }

    pub fn expect_u64(&mut self, tag: u8) -> Result<u64, DecodeError> {
        self.expect_fixed::<8>(tag).map(u64::from_be_bytes)
    }

    pub fn expect_string(&mut self, tag: u8) -> Result<String, DecodeError> {
        let f = self.expect(tag)?;
        String::from_utf8(f.value.to_vec()).map_err(|_| DecodeError {
            offset: f.value_offset(),
            kind: DecodeErrorKind::InvalidUtf8,
        })
    }

    pub fn finish(&self) -> Result<(), DecodeError> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(self.err(DecodeErrorKind::TrailingBytes))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_lengths_are_patched() {
        let mut w = TlvWriter::new();
        w.nested(0x01, |w| {
            w.u16(0x02, 7).field(0x03, b"abc");
        });
        let bytes = w.into_bytes();
        assert_eq!(bytes.len(), 5 + 7 + 8);
        let mut r = TlvReader::new(&bytes);
        let outer = r.expect(0x01).unwrap();
        let mut inner = outer.reader();
        assert_eq!(inner.expect_u16(0x02).unwrap(), 7);
        let f = inner.expect(0x03).unwrap();
        assert_eq!(f.value, b"abc");
        assert_eq!(f.value_offset(), 5 + 7 + 5);
        inner.finish().unwrap();
        r.finish().unwrap();
    }

    #[test]
    fn errors_carry_absolute_offsets() {
        let mut w = TlvWriter::new();
        w.nested(0x01, |w| {
            w.u16(0x02, 7);
        });
        let bytes = w.into_bytes();
        let mut inner = TlvReader::new(&bytes).expect(0x01).unwrap().reader();
        let err = inner.expect(0x09).unwrap_err();
        assert_eq!(err.offset, 5);
        assert_eq!(err.kind, DecodeErrorKind::UnexpectedTag { expected: 9, found: 2 });
        let truncated = &bytes[..bytes.len() - 1];
        assert_eq!(TlvReader::new(truncated).next_field().unwrap_err().kind, DecodeErrorKind::Truncated);
    }
}
