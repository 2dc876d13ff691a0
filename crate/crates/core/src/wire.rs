//! Datagram layout of the dissemination protocol. Byte-exact description in
//! `docs/wire.md`; all integers are big-endian.
//!
//! ```text
//! fixed header (20 bytes)
//!   0  magic            0xB1 0x0C
//!   2  version          1
//!   3  section_type     0 header, 1 transaction, 2 metadata, 3 cache sync
//!   4  block_number     u64
//!  12  section_index    u16
//!  14  total_sections   u16
//!  16  annotation_count u16
//!  18  payload_length   u16
//! annotations
//!   locator  1 | offset u16 | id u16                    (5 bytes)
//!   pointer  0 | field_kind u8 | offset u16 | len u16   (6 bytes)
//! payload
//! ```

use thiserror::Error;

use crate::identity::EncodedId;

pub const MAGIC: [u8; 2] = [0xB1, 0x0C];
pub const PROTOCOL_VERSION: u8 = 1;
pub const FIXED_HEADER_LEN: usize = 20;
pub const POINTER_LEN: usize = 6;
pub const LOCATOR_LEN: usize = 5;
pub const DEFAULT_PORT: u16 = 5000;
pub const DEFAULT_MAX_FRAME: usize = 8192;

const KIND_POINTER: u8 = 0;
const KIND_LOCATOR: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SectionType {
    Header,
    Tx,
    Metadata,
    CacheSync,
}

impl SectionType {
    pub fn code(self) -> u8 {
        match self {
            SectionType::Header => 0,
            SectionType::Tx => 1,
            SectionType::Metadata => 2,
            SectionType::CacheSync => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => SectionType::Header,
            1 => SectionType::Tx,
            2 => SectionType::Metadata,
            3 => SectionType::CacheSync,
            _ => return None,
        })
    }

    /// Section type expected at `index` of a block with `total` sections.
    pub fn at_index(index: u16, total: u16) -> SectionType {
        if index == 0 {
            SectionType::Header
        } else if index + 1 == total {
            SectionType::Metadata
        } else {
            SectionType::Tx
        }
    }
}

/// Field a pointer annotation locates inside the reconstructed section.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FieldKind {
    BlockNumber,
    PrevHash,
    DataHash,
    /// Certificate of the transaction creator, or of the orderer in a
    /// metadata section.
    CreatorIdSlot,
    ClientSignature,
    CcId,
    ReadSet,
    WriteSet,
    /// One `ENDORSEMENT` value: endorser certificate and signature.
    EndorsementBlob,
    OrdererSignature,
    /// The endorsed payload bytes.
    Payload,
}

impl FieldKind {
    pub const ALL: [FieldKind; 11] = [
        FieldKind::BlockNumber,
        FieldKind::PrevHash,
        FieldKind::DataHash,
        FieldKind::CreatorIdSlot,
        FieldKind::ClientSignature,
        FieldKind::CcId,
        FieldKind::ReadSet,
        FieldKind::WriteSet,
        FieldKind::EndorsementBlob,
        FieldKind::OrdererSignature,
        FieldKind::Payload,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pointer {
    pub kind: FieldKind,
    pub offset: u16,
    pub length: u16,
}

/// Marks where a certificate was replaced by its 2-byte id. `offset` is the
/// position of the id in the wire payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Locator {
    pub offset: u16,
    pub id: EncodedId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SectionPacket {
    pub section_type: SectionType,
    pub block_number: u64,
    pub section_index: u16,
    pub total_sections: u16,
    pub locators: Vec<Locator>,
    pub pointers: Vec<Pointer>,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("datagram of {0} bytes is shorter than the fixed header")]
    Short(usize),
    #[error("bad magic {0:02x}{1:02x}")]
    BadMagic(u8, u8),
    #[error("unsupported protocol version {0}")]
    BadVersion(u8),
    #[error("unknown section type {0}")]
    BadSectionType(u8),
    #[error("unknown annotation kind {0}")]
    BadAnnotationKind(u8),
    #[error("unknown field kind {0}")]
    BadFieldKind(u8),
    #[error("annotations or payload truncated")]
    Truncated,
    #[error("{0} trailing bytes after payload")]
    Trailing(usize),
    #[error("locator at {offset} outside payload or out of order")]
    BadLocator { offset: u16 },
    #[error("pointers out of order")]
    PointerOrder,
    #[error("section index {index} not below total {total}")]
    BadIndex { index: u16, total: u16 },
    #[error("{what} of {len} exceeds 16-bit field")]
    Overflow { what: &'static str, len: usize },
}

impl SectionPacket {
    pub fn annotation_count(&self) -> usize {
        self.locators.len() + self.pointers.len()
    }

    pub fn encoded_len(&self) -> usize {
        FIXED_HEADER_LEN + self.locators.len() * LOCATOR_LEN + self.pointers.len() * POINTER_LEN + self.payload.len()
    }

    pub fn encode(&self) -> Result<Vec<u8>, WireError> {
        let count = self.annotation_count();
        let count = u16::try_from(count).map_err(|_| WireError::Overflow {
            what: "annotation count",
            len: count,
        })?;
        let plen = u16::try_from(self.payload.len()).map_err(|_| WireError::Overflow {
            what: "payload length",
            len: self.payload.len(),
        })?;
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&MAGIC);
        out.push(PROTOCOL_VERSION);
        out.push(self.section_type.code());
        out.extend_from_slice(&self.block_number.to_be_bytes());
        out.extend_from_slice(&self.section_index.to_be_bytes());
        out.extend_from_slice(&self.total_sections.to_be_bytes());
        out.extend_from_slice(&count.to_be_bytes());
        out.extend_from_slice(&plen.to_be_bytes());
        for l in &self.locators {
            out.push(KIND_LOCATOR);
            out.extend_from_slice(&l.offset.to_be_bytes());
            out.extend_from_slice(&l.id.raw().to_be_bytes());
        }
        for p in &self.pointers {
            out.push(KIND_POINTER);
            out.push(p.kind.code());
            out.extend_from_slice(&p.offset.to_be_bytes());
            out.extend_from_slice(&p.length.to_be_bytes());
        }
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    pub fn decode(d: &[u8]) -> Result<SectionPacket, WireError> {
        if d.len() < FIXED_HEADER_LEN {
            return Err(WireError::Short(d.len()));
        }
        if d[..2] != MAGIC {
            return Err(WireError::BadMagic(d[0], d[1]));
        }
        if d[2] != PROTOCOL_VERSION {
            return Err(WireError::BadVersion(d[2]));
        }
        let section_type = SectionType::from_code(d[3]).ok_or(WireError::BadSectionType(d[3]))?;
        let be16 = |at: usize| u16::from_be_bytes([d[at], d[at + 1]]);
        let block_number = u64::from_be_bytes(d[4..12].try_into().unwrap());
        let section_index = be16(12);
        let total_sections = be16(14);
        let count = be16(16) as usize;
        let plen = be16(18) as usize;
        if section_index >= total_sections {
            return Err(WireError::BadIndex {
                index: section_index,
                total: total_sections,
            });
        }

        let mut pos = FIXED_HEADER_LEN;
        let mut locators = Vec::new();
        let mut pointers: Vec<Pointer> = Vec::new();
        for _ in 0..count {
            let kind = *d.get(pos).ok_or(WireError::Truncated)?;
            match kind {
                KIND_LOCATOR => {
                    if d.len() < pos + LOCATOR_LEN {
                        return Err(WireError::Truncated);
                    }
                    if !pointers.is_empty() {
                        return Err(WireError::PointerOrder);
                    }
                    locators.push(Locator {
                        offset: be16(pos + 1),
                        id: EncodedId::from_raw(be16(pos + 3)),
                    });
                    pos += LOCATOR_LEN;
                }
                KIND_POINTER => {
                    if d.len() < pos + POINTER_LEN {
                        return Err(WireError::Truncated);
                    }
                    let fk = d[pos + 1];
                    let p = Pointer {
                        kind: FieldKind::from_code(fk).ok_or(WireError::BadFieldKind(fk))?,
                        offset: be16(pos + 2),
                        length: be16(pos + 4),
                    };
                    if pointers.last().is_some_and(|q| q.offset > p.offset) {
                        return Err(WireError::PointerOrder);
                    }
                    pointers.push(p);
                    pos += POINTER_LEN;
                }
                other => return Err(WireError::BadAnnotationKind(other)),
            }
        }
        if d.len() < pos + plen {
            return Err(WireError::Truncated);
        }
        if d.len() > pos + plen {
            return Err(WireError::Trailing(d.len() - pos - plen));
        }
        let mut prev_end = 0usize;
        for l in &locators {
            let at = l.offset as usize;
            if at < prev_end || at + 2 > plen {
                return Err(WireError::BadLocator { offset: l.offset });
            }
            prev_end = at + 2;
        }
        Ok(SectionPacket {
            section_type,
            block_number,
            section_index,
            total_sections,
            locators,
            pointers,
            payload: d[pos..].to_vec(),
        })
    }
}

/// True if the datagram starts like a protocol packet. Used by the
/// classifier before a full decode.
pub fn has_magic(d: &[u8]) -> bool {
    d.len() >= 2 && d[..2] == MAGIC
}
