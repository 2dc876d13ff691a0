use sha2::{Digest, Sha256};

use super::codec::{payload_bytes, tx_signed_bytes};
use super::Transaction;

pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

/// Digest signed by the client: SHA-256 over every transaction field except
/// the client signature.
pub fn tx_digest(tx: &Transaction) -> [u8; 32] {
    sha256(&tx_signed_bytes(tx))
}

/// Digest signed by an endorser: SHA-256 over the payload bytes followed by
/// the endorser's certificate bytes.
pub fn endorsement_digest(tx: &Transaction, endorser_cert: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(payload_bytes(&tx.payload));
    h.update(endorser_cert);
    h.finalize().into()
}

/// Digest signed by the orderer: SHA-256 over the header section followed by
/// every transaction section in order.
pub fn block_digest<'a>(header_section: &[u8], tx_sections: impl IntoIterator<Item = &'a [u8]>) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(header_section);
    for s in tx_sections {
        h.update(s);
    }
    h.finalize().into()
}

/// SHA-256 over the concatenated transaction sections.
pub fn data_hash<'a>(tx_sections: impl IntoIterator<Item = &'a [u8]>) -> [u8; 32] {
    let mut h = Sha256::new();
    for s in tx_sections {
        h.update(s);
    }
    h.finalize().into()
}
