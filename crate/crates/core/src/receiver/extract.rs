//! Identity reinsertion and pointer-driven field extraction.

use thiserror::Error;

use crate::block::tags::{ENDORSER, ENDORSER_SIG, TX};
use crate::block::tlv::TlvReader;
use crate::block::{decode_read_set, decode_write_set, sha256, DecodeError, ReadItem, WriteItem};
use crate::fifo::VerifyRequest;
use crate::identity::{Certificate, EncodedId, IdentityCache, PublicKey};
use crate::wire::{FieldKind, Locator, Pointer, SectionType};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractError {
    #[error("identity {0} is not in the cache")]
    MissingIdentity(EncodedId),
    #[error("locator at {offset} does not sit on a certificate of the announced length")]
    LocatorMismatch { offset: u16 },
    #[error("pointer {kind:?} at {offset}+{length} lies outside the section")]
    PointerOutOfRange { kind: FieldKind, offset: u16, length: u16 },
    #[error("missing {0:?} pointer")]
    MissingPointer(FieldKind),
    #[error("{0:?} field has the wrong length")]
    BadField(FieldKind),
    #[error("nested field: {0}")]
    Decode(#[from] DecodeError),
    #[error("no fields to extract from a cache-sync packet")]
    NotASection,
}

/// Where a certificate was reinserted: value offset in the reconstructed
/// section and the id it replaced.
pub type IdPosition = (usize, EncodedId);

/// Replaces each 2-byte id named by a locator with the full certificate.
pub fn insert_identities(
    payload: &[u8],
    locators: &[Locator],
    cache: &IdentityCache,
) -> Result<(Vec<u8>, Vec<IdPosition>), ExtractError> {
    if locators.is_empty() {
        return Ok((payload.to_vec(), Vec::new()));
    }
    let mut certs = Vec::with_capacity(locators.len());
    let mut extra = 0;
    for l in locators {
        let cert = cache.cert_of(l.id).ok_or(ExtractError::MissingIdentity(l.id))?;
        extra += cert.len().saturating_sub(2);
        certs.push(cert);
    }
    let mut out = Vec::with_capacity(payload.len() + extra);
    let mut positions = Vec::with_capacity(locators.len());
    let mut pos = 0;
    for (l, cert) in locators.iter().zip(&certs) {
        let at = l.offset as usize;
        // The TLV length in front of the id still announces the certificate.
        let fits = at >= pos.max(4) && at + 2 <= payload.len();
        if !fits || u32::from_be_bytes(payload[at - 4..at].try_into().unwrap()) as usize != cert.len() {
            return Err(ExtractError::LocatorMismatch { offset: l.offset });
        }
        out.extend_from_slice(&payload[pos..at]);
        positions.push((out.len(), l.id));
        out.extend_from_slice(cert);
        pos = at + 2;
    }
    out.extend_from_slice(&payload[pos..]);
    Ok((out, positions))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeaderParts {
    pub number: u64,
    pub previous_hash: [u8; 32],
    pub data_hash: [u8; 32],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EndorsementParts {
    pub endorser_id: EncodedId,
    pub request: VerifyRequest,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxParts {
    pub cc_id: u16,
    pub request: VerifyRequest,
    pub endorsements: Vec<EndorsementParts>,
    pub reads: Vec<ReadItem>,
    pub writes: Vec<WriteItem>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetadataParts {
    pub orderer_key: Option<PublicKey>,
    pub signature: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SectionParts {
    Header(HeaderParts),
    Tx(TxParts),
    Metadata(MetadataParts),
}

struct Fields<'a> {
    section: &'a [u8],
    pointers: &'a [Pointer],
}

impl<'a> Fields<'a> {
    fn slice(&self, p: &Pointer) -> Result<&'a [u8], ExtractError> {
        let start = p.offset as usize;
        let end = start + p.length as usize;
        self.section.get(start..end).ok_or(ExtractError::PointerOutOfRange {
            kind: p.kind,
            offset: p.offset,
            length: p.length,
        })
    }

    fn pointer(&self, kind: FieldKind) -> Result<&'a Pointer, ExtractError> {
        self.pointers
            .iter()
            .find(|p| p.kind == kind)
            .ok_or(ExtractError::MissingPointer(kind))
    }

    fn get(&self, kind: FieldKind) -> Result<&'a [u8], ExtractError> {
        self.slice(self.pointer(kind)?)
    }

    fn fixed<const N: usize>(&self, kind: FieldKind) -> Result<[u8; N], ExtractError> {
        self.get(kind)?.try_into().map_err(|_| ExtractError::BadField(kind))
    }

    fn reader(&self, kind: FieldKind) -> Result<TlvReader<'a>, ExtractError> {
        let p = self.pointer(kind)?;
        Ok(TlvReader::at(self.slice(p)?, p.offset as usize))
    }
}

/// Pulls the validation inputs out of a reconstructed section using only its
/// pointer annotations: signatures are DER-decoded, public keys read from the
/// certificates, digests computed over the section bytes.
pub fn extract_and_process(
    section_type: SectionType,
    section: &[u8],
    pointers: &[Pointer],
    ids: &[IdPosition],
    cache: &IdentityCache,
) -> Result<SectionParts, ExtractError> {
    let f = Fields { section, pointers };
    match section_type {
        SectionType::Header => Ok(SectionParts::Header(HeaderParts {
            number: u64::from_be_bytes(f.fixed(FieldKind::BlockNumber)?),
            previous_hash: f.fixed(FieldKind::PrevHash)?,
            data_hash: f.fixed(FieldKind::DataHash)?,
        })),
        SectionType::Metadata => Ok(SectionParts::Metadata(MetadataParts {
            orderer_key: Certificate::public_key_of(f.get(FieldKind::CreatorIdSlot)?).ok(),
            signature: f.get(FieldKind::OrdererSignature)?.to_vec(),
        })),
        SectionType::Tx => {
            let sig_ptr = f.pointer(FieldKind::ClientSignature)?;
            let client_sig = f.slice(sig_ptr)?;
            // Signed bytes: the TX value up to the CLIENT_SIG field.
            let signed_end = (sig_ptr.offset as usize)
                .checked_sub(5)
                .filter(|&e| e >= 5 && section[0] == TX)
                .ok_or(ExtractError::BadField(FieldKind::ClientSignature))?;
            let tx_digest = sha256(&section[5..signed_end]);
            let creator_key = Certificate::public_key_of(f.get(FieldKind::CreatorIdSlot)?).ok();
            let payload = f.get(FieldKind::Payload)?;

            let mut endorsements = Vec::new();
            for p in pointers.iter().filter(|p| p.kind == FieldKind::EndorsementBlob) {
                let mut r = TlvReader::at(f.slice(p)?, p.offset as usize);
                let endorser = r.expect(ENDORSER)?;
                let sig = r.expect(ENDORSER_SIG)?;
                r.finish()?;
                let at = endorser.value_offset();
                let endorser_id = match ids.iter().find(|(o, _)| *o == at) {
                    Some((_, id)) => *id,
                    None => cache
                        .id_of(endorser.value)
                        .ok_or(ExtractError::BadField(FieldKind::EndorsementBlob))?,
                };
                let mut buf = Vec::with_capacity(payload.len() + endorser.value.len());
                buf.extend_from_slice(payload);
                buf.extend_from_slice(endorser.value);
                endorsements.push(EndorsementParts {
                    endorser_id,
                    request: VerifyRequest::from_der(
                        sig.value,
                        Certificate::public_key_of(endorser.value).ok(),
                        sha256(&buf),
                    ),
                });
            }
            Ok(SectionParts::Tx(TxParts {
                cc_id: u16::from_be_bytes(f.fixed(FieldKind::CcId)?),
                request: VerifyRequest::from_der(client_sig, creator_key, tx_digest),
                endorsements,
                reads: decode_read_set(f.reader(FieldKind::ReadSet)?)?,
                writes: decode_write_set(f.reader(FieldKind::WriteSet)?)?,
            }))
        }
        SectionType::CacheSync => Err(ExtractError::NotASection),
    }
}
