//! Blocks, transactions and endorsements, their baseline nested encoding, and
//! the canonical digests that signatures cover.
//!
//! The baseline encoding is a tag-length-value tree in which every creator,
//! endorser and orderer certificate appears inline in full. A block encodes
//! as three top-level fields:
//!
//! ```text
//! HEADER{NUMBER, PREV_HASH, DATA_HASH} | TXS{TX, TX, ...} | METADATA{ORDERER_CERT, ORDERER_SIG}
//! ```
//!
//! The header field, each `TX` field and the metadata field are the
//! *sections* that the dissemination protocol ships one per datagram.

mod build;
mod codec;
mod digest;
pub mod layout;
pub mod tags;
pub mod tlv;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use build::{build_signed_block, client_sign, endorse};
pub use codec::{
    decode_baseline, decode_header_section, decode_metadata_section, decode_read_set, decode_tx_section,
    decode_write_set, encode_baseline, encode_header_section, encode_metadata_section, encode_tx_section,
    payload_bytes, split_block_sections, tx_signed_bytes,
};
pub use digest::{block_digest, data_hash, endorsement_digest, sha256, tx_digest};
pub use tlv::{DecodeError, DecodeErrorKind};

use crate::identity::SignatureError;

/// Default upper bound on transactions per block.
pub const DEFAULT_MAX_TXS: usize = 256;

/// Version stamped on a key by the transaction that last wrote it.
///
/// `(0, 0)` is reserved to mean "key absent": block numbering starts at 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct Version {
    pub block_num: u64,
    pub tx_num: u32,
}

impl Version {
    pub const ABSENT: Version = Version {
        block_num: 0,
        tx_num: 0,
    };

    pub fn new(block_num: u64, tx_num: u32) -> Self {
        Version { block_num, tx_num }
    }

    pub fn to_bytes(self) -> [u8; 12] {
        let mut out = [0u8; 12];
        out[..8].copy_from_slice(&self.block_num.to_be_bytes());
        out[8..].copy_from_slice(&self.tx_num.to_be_bytes());
        out
    }

    pub fn from_bytes(b: &[u8; 12]) -> Self {
        Version {
            block_num: u64::from_be_bytes(b[..8].try_into().unwrap()),
            tx_num: u32::from_be_bytes(b[8..].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReadItem {
    pub key: Vec<u8>,
    pub version: Version,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WriteItem {
    pub key: Vec<u8>,
    pub value: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ChannelHeader {
    pub channel_id: String,
    pub tx_id: String,
    pub timestamp_nanos: u64,
    pub epoch: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Proposal {
    pub chaincode: String,
    pub version: String,
    pub args: Vec<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Response {
    pub status: u32,
    pub message: String,
    pub body: Vec<u8>,
}

/// The endorsed part of a transaction: simulation results plus nonce.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TxPayload {
    pub proposal_hash: [u8; 32],
    pub reads: Vec<ReadItem>,
    pub writes: Vec<WriteItem>,
    pub response: Response,
    pub nonce: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Endorsement {
    /// Serialized endorser certificate.
    pub endorser: Vec<u8>,
    /// DER signature over [`endorsement_digest`].
    pub signature: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Transaction {
    /// Serialized creator (client) certificate.
    pub creator: Vec<u8>,
    pub header: ChannelHeader,
    pub cc_id: u16,
    pub proposal: Proposal,
    pub payload: TxPayload,
    pub endorsements: Vec<Endorsement>,
    /// DER signature over [`tx_digest`].
    pub client_signature: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockHeader {
    pub number: u64,
    pub previous_hash: [u8; 32],
    /// SHA-256 over the concatenated transaction sections.
    pub data_hash: [u8; 32],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockMetadata {
    /// Serialized orderer certificate.
    pub orderer: Vec<u8>,
    /// DER signature over [`block_digest`].
    pub signature: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub header: BlockHeader,
    pub transactions: Vec<Transaction>,
    pub metadata: BlockMetadata,
}

impl Block {
    pub fn number(&self) -> u64 {
        self.header.number
    }

    /// Digest the orderer signs: header section followed by every
    /// transaction section.
    pub fn digest(&self) -> [u8; 32] {
        let header = encode_header_section(&self.header);
        let txs: Vec<Vec<u8>> = self.transactions.iter().map(encode_tx_section).collect();
        block_digest(&header, txs.iter().map(Vec::as_slice))
    }
}

#[derive(Debug, Error)]
pub enum BlockError {
    #[error("a block needs at least one transaction")]
    Empty,
    #[error("{count} transactions exceed the per-block maximum of {max}")]
    TooManyTransactions { count: usize, max: usize },
    #[error("signing failed: {0}")]
    Signing(#[from] SignatureError),
}
