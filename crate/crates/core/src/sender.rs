//! Sending side of the dissemination protocol: one datagram per section,
//! certificates replaced by their encoded ids, and pointer annotations so the
//! receiver can pull fields without walking the nesting.

use std::net::{SocketAddr, UdpSocket};
use std::sync::Arc;

use thiserror::Error;

use crate::block::layout::SectionLayout;
use crate::block::{encode_baseline, split_block_sections, Block, DecodeError};
use crate::identity::{EncodedId, IdentityCache, IdentityError};
use crate::wire::{Locator, Pointer, SectionPacket, SectionType, WireError, DEFAULT_MAX_FRAME};

#[derive(Debug, Error)]
pub enum SenderError {
    #[error("malformed section: {0}")]
    Section(#[from] DecodeError),
    #[error("identity at byte {offset} is not in the cache and registration is disabled")]
    UnknownIdentity { offset: usize },
    #[error(transparent)]
    Identity(#[from] IdentityError),
    #[error("block {block}: {what} needs {len} bytes, frame limit is {max}")]
    FrameLimit {
        block: u64,
        what: String,
        len: usize,
        max: usize,
    },
    #[error("section offsets exceed the 16-bit annotation range ({len} bytes)")]
    SectionTooLong { len: usize },
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("transport: {0}")]
    Io(#[from] std::io::Error),
}

/// Certificates stripped from a section, with the locators that mark where.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stripped {
    pub payload: Vec<u8>,
    pub locators: Vec<Locator>,
    /// Identities registered while stripping; the receiver must learn these
    /// before it sees the section.
    pub new_identities: Vec<EncodedId>,
    /// Certificate bytes removed from the section.
    pub identity_bytes: usize,
}

fn check_u16(len: usize) -> Result<u16, SenderError> {
    u16::try_from(len).map_err(|_| SenderError::SectionTooLong { len })
}

/// Replaces every certificate value in `section` by its 2-byte id. Length
/// prefixes keep the original certificate length so that reinsertion is the
/// exact inverse.
pub fn remove_identities(
    section: &[u8],
    section_type: SectionType,
    cache: &IdentityCache,
    register: bool,
) -> Result<Stripped, SenderError> {
    let layout = SectionLayout::scan(section_type, section)?;
    check_u16(section.len())?;
    let mut payload = Vec::with_capacity(section.len());
    let mut locators = Vec::with_capacity(layout.identities.len());
    let mut new_identities = Vec::new();
    let mut identity_bytes = 0;
    let mut pos = 0;
    for span in &layout.identities {
        let cert = &section[span.offset..span.offset + span.len];
        let id = match cache.id_of(cert) {
            Some(id) => id,
            None if register => {
                let id = cache.register_bytes(cert)?;
                if !new_identities.contains(&id) {
                    new_identities.push(id);
                }
                id
            }
            None => return Err(SenderError::UnknownIdentity { offset: span.offset }),
        };
        payload.extend_from_slice(&section[pos..span.offset]);
        locators.push(Locator {
            offset: check_u16(payload.len())?,
            id,
        });
        payload.extend_from_slice(&id.raw().to_be_bytes());
        identity_bytes += span.len;
        pos = span.offset + span.len;
    }
    payload.extend_from_slice(&section[pos..]);
    Ok(Stripped {
        payload,
        locators,
        new_identities,
        identity_bytes,
    })
}

/// Pointers to the fields the receiver extracts, in ascending offset order.
/// Offsets refer to the section with identities in place.
pub fn generate_annotations(section: &[u8], section_type: SectionType) -> Result<Vec<Pointer>, SenderError> {
    let layout = SectionLayout::scan(section_type, section)?;
    layout
        .fields
        .iter()
        .map(|f| {
            Ok(Pointer {
                kind: f.kind,
                offset: check_u16(f.offset)?,
                length: check_u16(f.len)?,
            })
        })
        .collect()
}

/// Announces the binding `id → cert` to the receiver.
pub fn cache_sync_packet(id: EncodedId, cert: &[u8]) -> SectionPacket {
    let mut payload = Vec::with_capacity(cert.len() + 2);
    payload.extend_from_slice(&id.raw().to_be_bytes());
    payload.extend_from_slice(cert);
    SectionPacket {
        section_type: SectionType::CacheSync,
        block_number: 0,
        section_index: 0,
        total_sections: 1,
        locators: Vec::new(),
        pointers: Vec::new(),
        payload,
    }
}

/// One block turned into datagrams.
#[derive(Debug, Clone, Default)]
pub struct EncodedBlock {
    pub block_number: u64,
    /// Cache-sync datagrams; must be delivered before `sections`.
    pub cache_sync: Vec<Vec<u8>>,
    /// One datagram per section, header first, metadata last.
    pub sections: Vec<Vec<u8>>,
    pub baseline_bytes: usize,
    /// Certificate bytes in the baseline encoding.
    pub identity_bytes: usize,
}

impl EncodedBlock {
    /// UDP payload bytes of every datagram, cache sync included.
    pub fn wire_bytes(&self) -> usize {
        self.cache_sync.iter().chain(&self.sections).map(Vec::len).sum()
    }

    pub fn datagrams(&self) -> impl Iterator<Item = &Vec<u8>> {
        self.cache_sync.iter().chain(&self.sections)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SendReport {
    pub packets: usize,
    pub wire_bytes: usize,
    pub baseline_bytes: usize,
    pub identity_bytes: usize,
}

impl SendReport {
    pub fn add(&mut self, other: &SendReport) {
        self.packets += other.packets;
        self.wire_bytes += other.wire_bytes;
        self.baseline_bytes += other.baseline_bytes;
        self.identity_bytes += other.identity_bytes;
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SenderConfig {
    pub max_frame: usize,
    /// Register certificates missing from the cache (and announce them)
    /// instead of failing.
    pub register_unknown: bool,
}

impl Default for SenderConfig {
    fn default() -> Self {
        SenderConfig {
            max_frame: DEFAULT_MAX_FRAME,
            register_unknown: true,
        }
    }
}

pub struct Sender {
    cache: Arc<IdentityCache>,
    config: SenderConfig,
}

impl Sender {
    pub fn new(cache: Arc<IdentityCache>, config: SenderConfig) -> Self {
        Sender { cache, config }
    }

    pub fn cache(&self) -> &Arc<IdentityCache> {
        &self.cache
    }

    /// Cache-sync datagrams for every identity currently in the cache.
    pub fn sync_all(&self, ids: impl IntoIterator<Item = EncodedId>) -> Vec<Vec<u8>> {
        ids.into_iter()
            .filter_map(|id| self.cache.cert_of(id).map(|c| (id, c)))
            .map(|(id, c)| cache_sync_packet(id, &c).encode().expect("cache sync fits"))
            .collect()
    }

    pub fn encode_block(&self, block: &Block) -> Result<EncodedBlock, SenderError> {
        let number = block.number();
        let sections = split_block_sections(block);
        let total = sections.len() as u16;
        let mut out = EncodedBlock {
            block_number: number,
            baseline_bytes: encode_baseline(block).len(),
            ..Default::default()
        };
        for (index, section) in sections.iter().enumerate() {
            let section_type = SectionType::at_index(index as u16, total);
            let stripped = remove_identities(section, section_type, &self.cache, self.config.register_unknown)?;
            for id in &stripped.new_identities {
                let cert = self.cache.cert_of(*id).expect("just registered");
                out.cache_sync.push(cache_sync_packet(*id, &cert).encode()?);
            }
            let packet = SectionPacket {
                section_type,
                block_number: number,
                section_index: index as u16,
                total_sections: total,
                locators: stripped.locators,
                pointers: generate_annotations(section, section_type)?,
                payload: stripped.payload,
            };
            let len = packet.encoded_len();
            if len > self.config.max_frame {
                let what = match section_type {
                    SectionType::Tx => format!("transaction {}", index - 1),
                    SectionType::Header => "header section".into(),
                    _ => "metadata section".into(),
                };
                return Err(SenderError::FrameLimit {
                    block: number,
                    what,
                    len,
                    max: self.config.max_frame,
                });
            }
            out.identity_bytes += stripped.identity_bytes;
            out.sections.push(packet.encode()?);
        }
        Ok(out)
    }

    /// Sends every datagram of `block` to `dest`, cache sync first.
    pub fn send_block(&self, socket: &UdpSocket, dest: SocketAddr, block: &Block) -> Result<SendReport, SenderError> {
        let encoded = self.encode_block(block)?;
        for d in encoded.datagrams() {
            socket.send_to(d, dest)?;
        }
        Ok(SendReport {
            packets: encoded.cache_sync.len() + encoded.sections.len(),
            wire_bytes: encoded.wire_bytes(),
            baseline_bytes: encoded.baseline_bytes,
            identity_bytes: encoded.identity_bytes,
        })
    }
}
