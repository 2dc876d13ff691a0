//! FIFO contents computed straight from an in-memory block, without the
//! wire. The receiver must produce exactly these entries.

use crate::block::{
    block_digest, data_hash, encode_header_section, encode_tx_section, endorsement_digest, tx_digest, Block,
};
use crate::fifo::{
    BlockEntries, BlockFifoEntry, EndsFifoEntry, RdsetFifoEntry, TxFifoEntry, VerifyRequest, WrsetFifoEntry,
};
use crate::identity::{Certificate, IdentityCache};

use super::ExtractError;

pub fn reference_entries(block: &Block, cache: &IdentityCache) -> Result<BlockEntries, ExtractError> {
    let n = block.number();
    let tx_sections: Vec<Vec<u8>> = block.transactions.iter().map(encode_tx_section).collect();
    let digest = block_digest(&encode_header_section(&block.header), tx_sections.iter().map(Vec::as_slice));
    let request = if data_hash(tx_sections.iter().map(Vec::as_slice)) == block.header.data_hash {
        VerifyRequest::from_der(
            &block.metadata.signature,
            Certificate::public_key_of(&block.metadata.orderer).ok(),
            digest,
        )
    } else {
        VerifyRequest::PreFailed
    };
    let mut out = BlockEntries {
        block: Some(BlockFifoEntry {
            block_num: n,
            num_txs: block.transactions.len() as u32,
            request,
            emitted_at: None,
        }),
        ..Default::default()
    };
    for (i, tx) in block.transactions.iter().enumerate() {
        let tx_num = i as u32;
        out.txs.push(TxFifoEntry {
            block_num: n,
            tx_num,
            cc_id: tx.cc_id,
            num_ends: tx.endorsements.len() as u32,
            rdset_size: tx.payload.reads.len() as u32,
            wrset_size: tx.payload.writes.len() as u32,
            request: VerifyRequest::from_der(
                &tx.client_signature,
                Certificate::public_key_of(&tx.creator).ok(),
                tx_digest(tx),
            ),
        });
        for e in &tx.endorsements {
            let endorser_id = cache
                .id_of(&e.endorser)
                .ok_or(ExtractError::BadField(crate::wire::FieldKind::EndorsementBlob))?;
            out.ends.push(EndsFifoEntry {
                block_num: n,
                tx_num,
                endorser_id,
                request: VerifyRequest::from_der(
                    &e.signature,
                    Certificate::public_key_of(&e.endorser).ok(),
                    endorsement_digest(tx, &e.endorser),
                ),
            });
        }
        out.rdsets.extend(tx.payload.reads.iter().map(|r| RdsetFifoEntry {
            block_num: n,
            tx_num,
            key: r.key.clone(),
            version: r.version,
        }));
        out.wrsets.extend(tx.payload.writes.iter().map(|w| WrsetFifoEntry {
            block_num: n,
            tx_num,
            key: w.key.clone(),
            value: w.value.clone(),
        }));
    }
    Ok(out)
}
