use super::tags::*;
use super::tlv::{DecodeError, DecodeErrorKind, Field, TlvReader, TlvWriter};
use super::{
    Block, BlockHeader, BlockMetadata, ChannelHeader, Endorsement, Proposal, ReadItem, Response, Transaction,
    TxPayload, Version, WriteItem,
};

pub fn encode_header_section(h: &BlockHeader) -> Vec<u8> {
    let mut w = TlvWriter::with_capacity(96);
    w.nested(HEADER, |w| {
        w.u64(NUMBER, h.number)
            .field(PREV_HASH, &h.previous_hash)
            .field(DATA_HASH, &h.data_hash);
    });
    w.into_bytes()
}

pub fn encode_metadata_section(m: &BlockMetadata) -> Vec<u8> {
    let mut w = TlvWriter::with_capacity(m.orderer.len() + m.signature.len() + 16);
    w.nested(METADATA, |w| {
        w.field(ORDERER_CERT, &m.orderer).field(ORDERER_SIG, &m.signature);
    });
    w.into_bytes()
}

fn write_payload(w: &mut TlvWriter, p: &TxPayload) {
    w.field(PROPOSAL_HASH, &p.proposal_hash);
    w.nested(READ_SET, |w| {
        for r in &p.reads {
            w.nested(READ, |w| {
                w.field(KEY, &r.key).field(VERSION, &r.version.to_bytes());
            });
        }
    });
    w.nested(WRITE_SET, |w| {
        for wr in &p.writes {
            w.nested(WRITE, |w| {
                w.field(KEY, &wr.key).field(VALUE, &wr.value);
            });
        }
    });
    w.nested(RESPONSE, |w| {
        w.u32(STATUS, p.response.status)
            .field(MESSAGE, p.response.message.as_bytes())
            .field(BODY, &p.response.body);
    });
    w.field(NONCE, &p.nonce);
}

/// Value bytes of the `PAYLOAD` field: what endorsers sign (together with
/// their own certificate).
pub fn payload_bytes(p: &TxPayload) -> Vec<u8> {
    let mut w = TlvWriter::with_capacity(256);
    write_payload(&mut w, p);
    w.into_bytes()
}

fn write_signed_fields(w: &mut TlvWriter, tx: &Transaction) {
    w.field(CREATOR, &tx.creator);
    w.nested(CHANNEL_HEADER, |w| {
        w.field(CHANNEL_ID, tx.header.channel_id.as_bytes())
            .field(TX_ID, tx.header.tx_id.as_bytes())
            .u64(TIMESTAMP, tx.header.timestamp_nanos)
            .u64(EPOCH, tx.header.epoch);
    });
    w.u16(CC_ID, tx.cc_id);
    w.nested(PROPOSAL, |w| {
        w.field(CC_NAME, tx.proposal.chaincode.as_bytes())
            .field(CC_VERSION, tx.proposal.version.as_bytes());
        for a in &tx.proposal.args {
            w.field(ARG, a);
        }
    });
    w.nested(PAYLOAD, |w| write_payload(w, &tx.payload));
    w.nested(ENDORSEMENTS, |w| {
        for e in &tx.endorsements {
            w.nested(ENDORSEMENT, |w| {
                w.field(ENDORSER, &e.endorser).field(ENDORSER_SIG, &e.signature);
            });
        }
    });
}

/// Every field of the transaction except the trailing client signature;
/// the bytes the client signs.
pub fn tx_signed_bytes(tx: &Transaction) -> Vec<u8> {
    let mut w = TlvWriter::with_capacity(4096);
    write_signed_fields(&mut w, tx);
    w.into_bytes()
}

pub fn encode_tx_section(tx: &Transaction) -> Vec<u8> {
    let mut w = TlvWriter::with_capacity(4096);
    w.nested(TX, |w| {
        write_signed_fields(w, tx);
        w.field(CLIENT_SIG, &tx.client_signature);
    });
    w.into_bytes()
}

/// Header, transaction and metadata sections in wire order.
pub fn split_block_sections(block: &Block) -> Vec<Vec<u8>> {
    let mut out = Vec::with_capacity(block.transactions.len() + 2);
    out.push(encode_header_section(&block.header));
    out.extend(block.transactions.iter().map(encode_tx_section));
    out.push(encode_metadata_section(&block.metadata));
    out
}

pub fn encode_baseline(block: &Block) -> Vec<u8> {
    let sections = split_block_sections(block);
    let (header, rest) = sections.split_first().expect("header section");
    let (metadata, txs) = rest.split_last().expect("metadata section");
    let mut w = TlvWriter::with_capacity(sections.iter().map(Vec::len).sum::<usize>() + 16);
    w.raw(header);
    w.nested(TXS, |w| {
        for t in txs {
            w.raw(t);
        }
    });
    w.raw(metadata);
    w.into_bytes()
}

fn bad(offset: usize, kind: DecodeErrorKind) -> DecodeError {
    DecodeError { offset, kind }
}

fn read_header(f: Field<'_>) -> Result<BlockHeader, DecodeError> {
    let mut r = f.reader();
    let h = BlockHeader {
        number: r.expect_u64(NUMBER)?,
        previous_hash: r.expect_fixed(PREV_HASH)?,
        data_hash: r.expect_fixed(DATA_HASH)?,
    };
    r.finish()?;
    Ok(h)
}

fn read_metadata(f: Field<'_>) -> Result<BlockMetadata, DecodeError> {
    let mut r = f.reader();
    let m = BlockMetadata {
        orderer: r.expect(ORDERER_CERT)?.value.to_vec(),
        signature: r.expect(ORDERER_SIG)?.value.to_vec(),
    };
    r.finish()?;
    Ok(m)
}

/// Decodes the value of a `READ_SET` field.
pub fn decode_read_set(mut r: TlvReader<'_>) -> Result<Vec<ReadItem>, DecodeError> {
    let mut out = Vec::new();
    while !r.is_empty() {
        let mut item = r.expect(READ)?.reader();
        let key = item.expect(KEY)?.value.to_vec();
        let version = Version::from_bytes(&item.expect_fixed(VERSION)?);
        item.finish()?;
        out.push(ReadItem { key, version });
    }
    Ok(out)
}

/// Decodes the value of a `WRITE_SET` field.
pub fn decode_write_set(mut r: TlvReader<'_>) -> Result<Vec<WriteItem>, DecodeError> {
    let mut out = Vec::new();
    while !r.is_empty() {
        let mut item = r.expect(WRITE)?.reader();
        let key = item.expect(KEY)?.value.to_vec();
        let value = item.expect(VALUE)?.value.to_vec();
        item.finish()?;
        out.push(WriteItem { key, value });
    }
    Ok(out)
}

fn read_payload(f: Field<'_>) -> Result<TxPayload, DecodeError> {
    let mut r = f.reader();
    let proposal_hash = r.expect_fixed(PROPOSAL_HASH)?;
    let reads = decode_read_set(r.expect(READ_SET)?.reader())?;
    let writes = decode_write_set(r.expect(WRITE_SET)?.reader())?;
    let mut resp = r.expect(RESPONSE)?.reader();
    let response = Response {
        status: resp.expect_u32(STATUS)?,
        message: resp.expect_string(MESSAGE)?,
        body: resp.expect(BODY)?.value.to_vec(),
    };
    resp.finish()?;
    let nonce = r.expect(NONCE)?.value.to_vec();
    r.finish()?;
    Ok(TxPayload {
        proposal_hash,
        reads,
        writes,
        response,
        nonce,
    })
}

fn read_tx(f: Field<'_>) -> Result<Transaction, DecodeError> {
    let mut r = f.reader();
    let creator = r.expect(CREATOR)?.value.to_vec();
    let mut ch = r.expect(CHANNEL_HEADER)?.reader();
    let header = ChannelHeader {
        channel_id: ch.expect_string(CHANNEL_ID)?,
        tx_id: ch.expect_string(TX_ID)?,
        timestamp_nanos: ch.expect_u64(TIMESTAMP)?,
        epoch: ch.expect_u64(EPOCH)?,
    };
    ch.finish()?;
    let cc_id = r.expect_u16(CC_ID)?;
    let mut pr = r.expect(PROPOSAL)?.reader();
    let chaincode = pr.expect_string(CC_NAME)?;
    let version = pr.expect_string(CC_VERSION)?;
    let mut args = Vec::new();
    while !pr.is_empty() {
        args.push(pr.expect(ARG)?.value.to_vec());
    }
    let payload = read_payload(r.expect(PAYLOAD)?)?;
    let mut es = r.expect(ENDORSEMENTS)?.reader();
    let mut endorsements = Vec::new();
    while !es.is_empty() {
        let mut e = es.expect(ENDORSEMENT)?.reader();
        endorsements.push(Endorsement {
            endorser: e.expect(ENDORSER)?.value.to_vec(),
            signature: e.expect(ENDORSER_SIG)?.value.to_vec(),
        });
        e.finish()?;
    }
    let client_signature = r.expect(CLIENT_SIG)?.value.to_vec();
    r.finish()?;
    Ok(Transaction {
        creator,
        header,
        cc_id,
        proposal: Proposal {
            chaincode,
            version,
            args,
        },
        payload,
        endorsements,
        client_signature,
    })
}

fn single_field(bytes: &[u8], tag: u8) -> Result<Field<'_>, DecodeError> {
    let mut r = TlvReader::new(bytes);
    let f = r.expect(tag)?;
    r.finish()?;
    Ok(f)
}

pub fn decode_header_section(bytes: &[u8]) -> Result<BlockHeader, DecodeError> {
    read_header(single_field(bytes, HEADER)?)
}

pub fn decode_tx_section(bytes: &[u8]) -> Result<Transaction, DecodeError> {
    read_tx(single_field(bytes, TX)?)
}

pub fn decode_metadata_section(bytes: &[u8]) -> Result<BlockMetadata, DecodeError> {
    read_metadata(single_field(bytes, METADATA)?)
}

pub fn decode_baseline(bytes: &[u8]) -> Result<Block, DecodeError> {
    let mut r = TlvReader::new(bytes);
    let header = read_header(r.expect(HEADER)?)?;
    let txs_field = r.expect(TXS)?;
    let mut txs = txs_field.reader();
    let mut transactions = Vec::new();
    while !txs.is_empty() {
        transactions.push(read_tx(txs.expect(TX)?)?);
    }
    let metadata = read_metadata(r.expect(METADATA)?)?;
    r.finish()?;
    if transactions.is_empty() {
        return Err(bad(txs_field.start, DecodeErrorKind::Invalid("block without transactions")));
    }
    Ok(Block {
        header,
        transactions,
        metadata,
    })
}
