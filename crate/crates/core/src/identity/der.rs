//! Strict DER codec for ECDSA signatures: `SEQUENCE { INTEGER r, INTEGER s }`.
//!
//! Decoding yields fixed-width 32-byte big-endian scalars, the form the
//! verification engines consume. Non-minimal encodings are rejected.

use thiserror::Error;

const TAG_SEQUENCE: u8 = 0x30;
const TAG_INTEGER: u8 = 0x02;
const SCALAR_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerErrorKind {
    Truncated,
    UnexpectedTag { expected: u8, found: u8 },
    IndefiniteLength,
    NonMinimalLength,
    LengthTooLong,
    EmptyInteger,
    NonMinimalInteger,
    NegativeInteger,
    IntegerTooLarge,
    TrailingBytes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("DER decode error at byte {offset}: {kind:?}")]
pub struct DerError {
    pub offset: usize,
    pub kind: DerErrorKind,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, kind: DerErrorKind) -> DerError {
        DerError {
            offset: self.pos,
            kind,
        }
    }

    fn byte(&mut self) -> Result<u8, DerError> {
        let b = *self
            .bytes
            .get(self.pos)
            .ok_or_else(|| self.err(DerErrorKind::Truncated))?;
        self.pos += 1;
        Ok(b)
    }

    fn tag(&mut self, expected: u8) -> Result<(), DerError> {
        let at = self.pos;
        let found = self.byte()?;
        if found != expected {
            return Err(DerError {
                offset: at,
                kind: DerErrorKind::UnexpectedTag { expected, found },
            });
        }
        Ok(())
    }

    fn length(&mut self) -> Result<usize, DerError> {
        let at = self.pos;
        let first = self.byte()?;
        match first {
            0x00..=0x7F => Ok(first as usize),
            0x80 => Err(DerError {
                offset: at,
                kind: DerErrorKind::IndefiniteLength,
            }),
            0x81 => {
                let len = self.byte()?;
                if len < 0x80 {
                    return Err(DerError {
                        offset: at,
                        kind: DerErrorKind::NonMinimalLength,
                    });
                }
                Ok(len as usize)
            }
            // An ECDSA P-256 signature never needs more than one length byte.
            _ => Err(DerError {
                offset: at,
                kind: DerErrorKind::LengthTooLong,
            }),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DerError> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(DerErrorKind::Truncated));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn integer(&mut self) -> Result<[u8; SCALAR_LEN], DerError> {
        self.tag(TAG_INTEGER)?;
        let len = self.length()?;
        let at = self.pos;
        let content = self.take(len)?;
        let fail = |kind| DerError { offset: at, kind };
        let (&first, rest) = content
            .split_first()
            .ok_or_else(|| fail(DerErrorKind::EmptyInteger))?;
        if first & 0x80 != 0 {
            return Err(fail(DerErrorKind::NegativeInteger));
        }
        let magnitude = if first == 0 && !rest.is_empty() {
            if rest[0] & 0x80 == 0 {
                return Err(fail(DerErrorKind::NonMinimalInteger));
            }
            rest
        } else {
            content
        };
        if magnitude.len() > SCALAR_LEN {
            return Err(fail(DerErrorKind::IntegerTooLarge));
        }
        let mut out = [0u8; SCALAR_LEN];
        out[SCALAR_LEN - magnitude.len()..].copy_from_slice(magnitude);
        Ok(out)
    }
}

/// Decodes a DER signature into `(r, s)` as 32-byte big-endian values.
pub fn der_decode_signature(bytes: &[u8]) -> Result<([u8; 32], [u8; 32]), DerError> {
    let mut r = Reader { bytes, pos: 0 };
    r.tag(TAG_SEQUENCE)?;
    let len = r.length()?;
    let body_start = r.pos;
    if bytes.len() - body_start < len {
        return Err(r.err(DerErrorKind::Truncated));
    }
    if bytes.len() - body_start > len {
        return Err(DerError {
            offset: body_start + len,
            kind: DerErrorKind::TrailingBytes,
        });
    }
    let rv = r.integer()?;
    let sv = r.integer()?;
    if r.pos != bytes.len() {
        return Err(r.err(DerErrorKind::TrailingBytes));
    }
    Ok((rv, sv))
}

fn push_integer(out: &mut Vec<u8>, value: &[u8; SCALAR_LEN]) {
    let first_nonzero = value.iter().position(|&b| b != 0).unwrap_or(SCALAR_LEN - 1);
    let magnitude = &value[first_nonzero..];
    let pad = magnitude[0] & 0x80 != 0;
    out.push(TAG_INTEGER);
    out.push((magnitude.len() + pad as usize) as u8);
    if pad {
        out.push(0);
    }
    out.extend_from_slice(magnitude);
}

/// Minimal DER encoding of `(r, s)`.
pub fn der_encode_signature(r: &[u8; 32], s: &[u8; 32]) -> Vec<u8> {
    let mut body = Vec::with_capacity(70);
    push_integer(&mut body, r);
    push_integer(&mut body, s);
    let mut out = Vec::with_capacity(body.len() + 2);
    out.push(TAG_SEQUENCE);
    out.push(body.len() as u8);
    out.extend_from_slice(&body);
    out
}
