//! Offsets of identities and validation-relevant fields inside an encoded
//! section. The sender uses this to strip identities and emit pointers; the
//! receiver never needs it because pointers travel with the section.

use super::tags::*;
use super::tlv::{DecodeError, DecodeErrorKind, Field, TlvReader};
use crate::wire::{FieldKind, SectionType};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdentityRole {
    Creator,
    Endorser,
    Orderer,
}

/// Value span of a serialized certificate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdentitySpan {
    pub role: IdentityRole,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldSpan {
    pub kind: FieldKind,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SectionLayout {
    /// Ascending by offset.
    pub identities: Vec<IdentitySpan>,
    /// Ascending by offset.
    pub fields: Vec<FieldSpan>,
}

impl SectionLayout {
    pub fn field(&self, kind: FieldKind) -> Option<FieldSpan> {
        self.fields.iter().copied().find(|f| f.kind == kind)
    }

    fn push_field(&mut self, kind: FieldKind, f: &Field<'_>) {
        self.fields.push(FieldSpan {
            kind,
            offset: f.value_offset(),
            len: f.value.len(),
        });
    }

    fn push_identity(&mut self, role: IdentityRole, f: &Field<'_>) {
        self.identities.push(IdentitySpan {
            role,
            offset: f.value_offset(),
            len: f.value.len(),
        });
    }

    /// Scans one encoded section. Cache-sync packets carry no section and are
    /// rejected.
    pub fn scan(section_type: SectionType, bytes: &[u8]) -> Result<SectionLayout, DecodeError> {
        let mut out = SectionLayout::default();
        let mut top = TlvReader::new(bytes);
        match section_type {
            SectionType::Header => {
                let mut r = top.expect(HEADER)?.reader();
                out.push_field(FieldKind::BlockNumber, &r.expect(NUMBER)?);
                out.push_field(FieldKind::PrevHash, &r.expect(PREV_HASH)?);
                out.push_field(FieldKind::DataHash, &r.expect(DATA_HASH)?);
                r.finish()?;
            }
            SectionType::Tx => {
                let mut r = top.expect(TX)?.reader();
                let creator = r.expect(CREATOR)?;
                out.push_identity(IdentityRole::Creator, &creator);
                out.push_field(FieldKind::CreatorIdSlot, &creator);
                r.expect(CHANNEL_HEADER)?;
                out.push_field(FieldKind::CcId, &r.expect(CC_ID)?);
                r.expect(PROPOSAL)?;
                let payload = r.expect(PAYLOAD)?;
                out.push_field(FieldKind::Payload, &payload);
                let mut p = payload.reader();
                p.expect(PROPOSAL_HASH)?;
                out.push_field(FieldKind::ReadSet, &p.expect(READ_SET)?);
                out.push_field(FieldKind::WriteSet, &p.expect(WRITE_SET)?);
                let mut er = r.expect(ENDORSEMENTS)?.reader();
                while !er.is_empty() {
                    let blob = er.expect(ENDORSEMENT)?;
                    out.push_field(FieldKind::EndorsementBlob, &blob);
                    let mut e = blob.reader();
                    out.push_identity(IdentityRole::Endorser, &e.expect(ENDORSER)?);
                    e.expect(ENDORSER_SIG)?;
                    e.finish()?;
                }
                out.push_field(FieldKind::ClientSignature, &r.expect(CLIENT_SIG)?);
                r.finish()?;
            }
            SectionType::Metadata => {
                let mut r = top.expect(METADATA)?.reader();
                let orderer = r.expect(ORDERER_CERT)?;
                out.push_identity(IdentityRole::Orderer, &orderer);
                out.push_field(FieldKind::CreatorIdSlot, &orderer);
                out.push_field(FieldKind::OrdererSignature, &r.expect(ORDERER_SIG)?);
                r.finish()?;
            }
            SectionType::CacheSync => {
                return Err(top.err(DecodeErrorKind::Invalid("cache-sync packets carry no section")));
            }
        }
        top.finish()?;
        // Payload encloses the read and write sets; a stable sort keeps it first.
        out.fields.sort_by_key(|f| f.offset);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::{encode_metadata_section, BlockMetadata};

    #[test]
    fn metadata_spans_point_at_values() {
        let m = BlockMetadata {
            orderer: vec![7; 40],
            signature: vec![9; 70],
        };
        let bytes = encode_metadata_section(&m);
        let l = SectionLayout::scan(SectionType::Metadata, &bytes).unwrap();
        assert_eq!(l.identities.len(), 1);
        let id = l.identities[0];
        assert_eq!(&bytes[id.offset..id.offset + id.len], &m.orderer[..]);
        let sig = l.field(FieldKind::OrdererSignature).unwrap();
        assert_eq!(&bytes[sig.offset..sig.offset + sig.len], &m.signature[..]);
        assert!(SectionLayout::scan(SectionType::Header, &bytes).is_err());
    }
}
