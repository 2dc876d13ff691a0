//! Typed queues between the receiver and the block processor.
//!
//! For every block the receiver writes one block entry, then per transaction
//! its transaction entry, its endorsement entries, its read-set entries and
//! its write-set entries, all in original order. Consumers rely on that
//! discipline to pair entries by count alone.

use std::collections::BTreeMap;
use std::time::Instant;

use crossbeam_channel::{bounded, Receiver, Sender};

use crate::block::Version;
use crate::identity::{der_decode_signature, EncodedId, PublicKey};

/// Default depth of every queue.
pub const DEFAULT_FIFO_CAPACITY: usize = 4096;

/// Input to a signature engine. A request whose signature or key could not
/// be decoded is carried as `PreFailed` and verifies as false.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VerifyRequest {
    Ready {
        r: [u8; 32],
        s: [u8; 32],
        public_key: PublicKey,
        digest: [u8; 32],
    },
    PreFailed,
}

impl VerifyRequest {
    pub fn from_der(sig: &[u8], public_key: Option<PublicKey>, digest: [u8; 32]) -> Self {
        match (der_decode_signature(sig), public_key) {
            (Ok((r, s)), Some(public_key)) => VerifyRequest::Ready {
                r,
                s,
                public_key,
                digest,
            },
            _ => VerifyRequest::PreFailed,
        }
    }

    pub fn is_pre_failed(&self) -> bool {
        matches!(self, VerifyRequest::PreFailed)
    }
}

#[derive(Debug, Clone)]
pub struct BlockFifoEntry {
    pub block_num: u64,
    pub num_txs: u32,
    pub request: VerifyRequest,
    /// When the receiver released the block; ignored by equality.
    pub emitted_at: Option<Instant>,
}

impl PartialEq for BlockFifoEntry {
    fn eq(&self, other: &Self) -> bool {
        self.block_num == other.block_num && self.num_txs == other.num_txs && self.request == other.request
    }
}

impl Eq for BlockFifoEntry {}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxFifoEntry {
    pub block_num: u64,
    pub tx_num: u32,
    pub cc_id: u16,
    pub num_ends: u32,
    pub rdset_size: u32,
    pub wrset_size: u32,
    pub request: VerifyRequest,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EndsFifoEntry {
    pub block_num: u64,
    pub tx_num: u32,
    pub endorser_id: EncodedId,
    pub request: VerifyRequest,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RdsetFifoEntry {
    pub block_num: u64,
    pub tx_num: u32,
    pub key: Vec<u8>,
    pub version: Version,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WrsetFifoEntry {
    pub block_num: u64,
    pub tx_num: u32,
    pub key: Vec<u8>,
    pub value: Vec<u8>,
}

/// Everything the receiver emits for one block, in emission order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BlockEntries {
    pub block: Option<BlockFifoEntry>,
    pub txs: Vec<TxFifoEntry>,
    pub ends: Vec<EndsFifoEntry>,
    pub rdsets: Vec<RdsetFifoEntry>,
    pub wrsets: Vec<WrsetFifoEntry>,
}

impl BlockEntries {
    pub fn block_num(&self) -> Option<u64> {
        self.block.as_ref().map(|b| b.block_num)
    }

    pub fn entry_count(&self) -> usize {
        self.block.is_some() as usize + self.txs.len() + self.ends.len() + self.rdsets.len() + self.wrsets.len()
    }
}

#[derive(Clone)]
pub struct FifoWriters {
    pub block: Sender<BlockFifoEntry>,
    pub tx: Sender<TxFifoEntry>,
    pub ends: Sender<EndsFifoEntry>,
    pub rdset: Sender<RdsetFifoEntry>,
    pub wrset: Sender<WrsetFifoEntry>,
}

#[derive(Clone)]
pub struct FifoReaders {
    pub block: Receiver<BlockFifoEntry>,
    pub tx: Receiver<TxFifoEntry>,
    pub ends: Receiver<EndsFifoEntry>,
    pub rdset: Receiver<RdsetFifoEntry>,
    pub wrset: Receiver<WrsetFifoEntry>,
}

/// Creates the five bounded queues. Writers block when a queue is full.
pub fn fifo_set(capacity: usize) -> (FifoWriters, FifoReaders) {
    let (b_tx, b_rx) = bounded(capacity);
    let (t_tx, t_rx) = bounded(capacity);
    let (e_tx, e_rx) = bounded(capacity);
    let (r_tx, r_rx) = bounded(capacity);
    let (w_tx, w_rx) = bounded(capacity);
    (
        FifoWriters {
            block: b_tx,
            tx: t_tx,
            ends: e_tx,
            rdset: r_tx,
            wrset: w_tx,
        },
        FifoReaders {
            block: b_rx,
            tx: t_rx,
            ends: e_rx,
            rdset: r_rx,
            wrset: w_rx,
        },
    )
}

/// Queue send failed because the consumer side is gone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("fifo consumer disconnected")]
pub struct Disconnected;

impl FifoWriters {
    /// Writes one block's entries in the documented order: block entry, then
    /// per transaction its tx, endorsement, read-set and write-set entries.
    pub fn write_block(&self, entries: BlockEntries) -> Result<(), Disconnected> {
        let BlockEntries {
            block,
            txs,
            ends,
            rdsets,
            wrsets,
        } = entries;
        if let Some(b) = block {
            self.block.send(b).map_err(|_| Disconnected)?;
        }
        let mut ends = ends.into_iter().peekable();
        let mut rdsets = rdsets.into_iter().peekable();
        let mut wrsets = wrsets.into_iter().peekable();
        for tx in txs {
            let n = tx.tx_num;
            self.tx.send(tx).map_err(|_| Disconnected)?;
            while let Some(e) = ends.next_if(|e| e.tx_num == n) {
                self.ends.send(e).map_err(|_| Disconnected)?;
            }
            while let Some(r) = rdsets.next_if(|r| r.tx_num == n) {
                self.rdset.send(r).map_err(|_| Disconnected)?;
            }
            while let Some(w) = wrsets.next_if(|w| w.tx_num == n) {
                self.wrset.send(w).map_err(|_| Disconnected)?;
            }
        }
        Ok(())
    }
}

impl FifoReaders {
    /// Drains whatever is queued right now, grouped per block. Test helper
    /// for comparing receiver output against reference entries.
    pub fn drain(&self) -> Vec<BlockEntries> {
        let mut out: BTreeMap<u64, BlockEntries> = BTreeMap::new();
        for b in self.block.try_iter() {
            let n = b.block_num;
            out.entry(n).or_default().block = Some(b);
        }
        for t in self.tx.try_iter() {
            let n = t.block_num;
            out.entry(n).or_default().txs.push(t);
        }
        for e in self.ends.try_iter() {
            let n = e.block_num;
            out.entry(n).or_default().ends.push(e);
        }
        for r in self.rdset.try_iter() {
            let n = r.block_num;
            out.entry(n).or_default().rdsets.push(r);
        }
        for w in self.wrset.try_iter() {
            let n = w.block_num;
            out.entry(n).or_default().wrsets.push(w);
        }
        out.into_values().collect()
    }
}
