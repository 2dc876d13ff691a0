use super::codec::{encode_header_section, encode_tx_section};
use super::digest::{block_digest, data_hash, endorsement_digest, tx_digest};
use super::{Block, BlockError, BlockHeader, BlockMetadata, Endorsement, Transaction};
use crate::identity::SigningKey;

/// Endorses `tx` as the holder of `endorser_cert`. The transaction's payload
/// must be final; endorsements are not part of the endorsed bytes.
pub fn endorse(tx: &Transaction, endorser_cert: &[u8], key: &SigningKey) -> Result<Endorsement, BlockError> {
    let digest = endorsement_digest(tx, endorser_cert);
    Ok(Endorsement {
        endorser: endorser_cert.to_vec(),
        signature: key.sign_digest(&digest)?,
    })
}

/// Fills in `tx.client_signature`. Call after all endorsements are attached.
pub fn client_sign(tx: &mut Transaction, key: &SigningKey) -> Result<(), BlockError> {
    tx.client_signature = key.sign_digest(&tx_digest(tx))?;
    Ok(())
}

/// Assembles a block, computing its data hash and orderer signature.
pub fn build_signed_block(
    number: u64,
    previous_hash: [u8; 32],
    transactions: Vec<Transaction>,
    orderer_cert: &[u8],
    orderer_key: &SigningKey,
    max_txs: usize,
) -> Result<Block, BlockError> {
    if transactions.is_empty() {
        return Err(BlockError::Empty);
    }
    if transactions.len() > max_txs {
        return Err(BlockError::TooManyTransactions {
            count: transactions.len(),
            max: max_txs,
        });
    }
    let sections: Vec<Vec<u8>> = transactions.iter().map(encode_tx_section).collect();
    let header = BlockHeader {
        number,
        previous_hash,
        data_hash: data_hash(sections.iter().map(Vec::as_slice)),
    };
    let digest = block_digest(&encode_header_section(&header), sections.iter().map(Vec::as_slice));
    Ok(Block {
        header,
        transactions,
        metadata: BlockMetadata {
            orderer: orderer_cert.to_vec(),
            signature: orderer_key.sign_digest(&digest)?,
        },
    })
}
