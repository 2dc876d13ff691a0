//! Receiving side of the dissemination protocol.
//!
//! [`ReceiverCore`] is the protocol processor: it classifies datagrams,
//! reinserts identities, extracts fields by pointer, hashes sections as they
//! arrive, and stages each block until all of its sections are in. Complete
//! blocks are released whole and in block-number order as [`BlockEntries`];
//! a block still incomplete at its deadline is counted and dropped.
//!
//! The core is synchronous and takes the current time as an argument;
//! [`spawn_udp_receiver`] wraps it with a socket thread and an emitter
//! thread that writes released blocks to the FIFOs.

mod extract;
mod hash;
mod reference;
mod socket;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use extract::{
    extract_and_process, insert_identities, EndorsementParts, ExtractError, HeaderParts, IdPosition, MetadataParts,
    SectionParts, TxParts,
};
pub use hash::BlockHasher;
pub use reference::reference_entries;
pub use socket::{bind_receiver_socket, spawn_udp_receiver, ReceiverHandle};

use crate::fifo::{
    BlockEntries, BlockFifoEntry, EndsFifoEntry, RdsetFifoEntry, TxFifoEntry, VerifyRequest, WrsetFifoEntry,
};
use crate::identity::{EncodedId, IdentityCache};
use crate::wire::{SectionPacket, SectionType, WireError, DEFAULT_PORT};

pub const DEFAULT_REASSEMBLY_DEADLINE: Duration = Duration::from_millis(250);

/// Outcome of looking at one datagram.
#[derive(Debug, PartialEq, Eq)]
pub enum Classified<'a> {
    Bmac(SectionPacket),
    /// Not protocol traffic; hand to the bypass sink untouched.
    Normal(&'a [u8]),
    /// Arrived on the protocol port but does not parse.
    Malformed(WireError),
}

pub fn classify_packet(dest_port: u16, bmac_port: u16, datagram: &[u8]) -> Classified<'_> {
    if dest_port != bmac_port {
        return Classified::Normal(datagram);
    }
    match SectionPacket::decode(datagram) {
        Ok(p) => Classified::Bmac(p),
        Err(e) => Classified::Malformed(e),
    }
}

/// Destination for non-protocol datagrams.
pub trait BypassSink: Send + Sync {
    fn forward(&self, dest_port: u16, datagram: &[u8]);
}

#[derive(Debug, Default)]
pub struct NoopSink;

impl BypassSink for NoopSink {
    fn forward(&self, _: u16, _: &[u8]) {}
}

/// Keeps every bypassed datagram; for tests.
#[derive(Debug, Default)]
pub struct VecSink(pub Mutex<Vec<(u16, Vec<u8>)>>);

impl VecSink {
    pub fn take(&self) -> Vec<(u16, Vec<u8>)> {
        std::mem::take(&mut self.0.lock().unwrap())
    }
}

impl BypassSink for VecSink {
    fn forward(&self, dest_port: u16, datagram: &[u8]) {
        self.0.lock().unwrap().push((dest_port, datagram.to_vec()));
    }
}

/// Re-sends bypassed datagrams to a fixed address.
#[derive(Debug)]
pub struct ForwardSink {
    pub socket: std::net::UdpSocket,
    pub dest: std::net::SocketAddr,
}

impl BypassSink for ForwardSink {
    fn forward(&self, _: u16, datagram: &[u8]) {
        let _ = self.socket.send_to(datagram, self.dest);
    }
}

#[derive(Debug, Default)]
pub struct ReceiverCounters {
    pub packets: AtomicU64,
    pub bytes: AtomicU64,
    pub bmac_packets: AtomicU64,
    pub bypassed: AtomicU64,
    pub malformed: AtomicU64,
    pub cache_sync: AtomicU64,
    pub duplicates: AtomicU64,
    pub stale: AtomicU64,
    pub incomplete_blocks: AtomicU64,
    pub undecodable_blocks: AtomicU64,
    pub blocks_released: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterSnapshot {
    pub packets: u64,
    pub bytes: u64,
    pub bmac_packets: u64,
    pub bypassed: u64,
    pub malformed: u64,
    pub cache_sync: u64,
    pub duplicates: u64,
    pub stale: u64,
    pub incomplete_blocks: u64,
    pub undecodable_blocks: u64,
    pub blocks_released: u64,
}

fn bump(c: &AtomicU64) {
    c.fetch_add(1, Ordering::Relaxed);
}

impl ReceiverCounters {
    pub fn snapshot(&self) -> CounterSnapshot {
        let g = |c: &AtomicU64| c.load(Ordering::Relaxed);
        CounterSnapshot {
            packets: g(&self.packets),
            bytes: g(&self.bytes),
            bmac_packets: g(&self.bmac_packets),
            bypassed: g(&self.bypassed),
            malformed: g(&self.malformed),
            cache_sync: g(&self.cache_sync),
            duplicates: g(&self.duplicates),
            stale: g(&self.stale),
            incomplete_blocks: g(&self.incomplete_blocks),
            undecodable_blocks: g(&self.undecodable_blocks),
            blocks_released: g(&self.blocks_released),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ReceiverConfig {
    pub port: u16,
    pub deadline: Duration,
}

impl Default for ReceiverConfig {
    fn default() -> Self {
        ReceiverConfig {
            port: DEFAULT_PORT,
            deadline: DEFAULT_REASSEMBLY_DEADLINE,
        }
    }
}

struct Assembly {
    total: u16,
    seen: Vec<bool>,
    received: u16,
    started: Instant,
    hasher: BlockHasher,
    header: Option<HeaderParts>,
    txs: Vec<Option<TxParts>>,
    metadata: Option<MetadataParts>,
}

impl Assembly {
    fn new(total: u16, now: Instant) -> Self {
        Assembly {
            total,
            seen: vec![false; total as usize],
            received: 0,
            started: now,
            hasher: BlockHasher::new(total),
            header: None,
            txs: vec![None; total.saturating_sub(2) as usize],
            metadata: None,
        }
    }

    fn is_complete(&self) -> bool {
        self.received == self.total
    }

    fn into_entries(self, block_num: u64) -> BlockEntries {
        let (digest, data_hash) = self.hasher.finish().expect("all sections hashed");
        let header = self.header.expect("complete block has a header");
        let meta = self.metadata.expect("complete block has metadata");
        let request = if data_hash == header.data_hash {
            VerifyRequest::from_der(&meta.signature, meta.orderer_key, digest)
        } else {
            VerifyRequest::PreFailed
        };
        let mut out = BlockEntries {
            block: Some(BlockFifoEntry {
                block_num,
                num_txs: self.txs.len() as u32,
                request,
                emitted_at: None,
            }),
            ..Default::default()
        };
        for (tx_num, tx) in self.txs.into_iter().enumerate() {
            let tx = tx.expect("complete block has every transaction");
            let tx_num = tx_num as u32;
            out.txs.push(TxFifoEntry {
                block_num,
                tx_num,
                cc_id: tx.cc_id,
                num_ends: tx.endorsements.len() as u32,
                rdset_size: tx.reads.len() as u32,
                wrset_size: tx.writes.len() as u32,
                request: tx.request,
            });
            out.ends.extend(tx.endorsements.into_iter().map(|e| EndsFifoEntry {
                block_num,
                tx_num,
                endorser_id: e.endorser_id,
                request: e.request,
            }));
            out.rdsets.extend(tx.reads.into_iter().map(|r| RdsetFifoEntry {
                block_num,
                tx_num,
                key: r.key,
                version: r.version,
            }));
            out.wrsets.extend(tx.writes.into_iter().map(|w| WrsetFifoEntry {
                block_num,
                tx_num,
                key: w.key,
                value: w.value,
            }));
        }
        out
    }
}

struct Ready {
    entries: BlockEntries,
    since: Instant,
}

/// Why a protocol packet was not accepted.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PacketError {
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error("section type does not match its index")]
    TypeMismatch,
    #[error("total section count changed within block")]
    TotalMismatch,
    #[error("header names block {found}, packet says {expected}")]
    NumberMismatch { expected: u64, found: u64 },
    #[error("cache sync for {0}: {1}")]
    CacheSync(EncodedId, String),
}

pub struct ReceiverCore {
    cache: Arc<IdentityCache>,
    config: ReceiverConfig,
    bypass: Arc<dyn BypassSink>,
    counters: Arc<ReceiverCounters>,
    assemblies: BTreeMap<u64, Assembly>,
    ready: BTreeMap<u64, Ready>,
    /// Every block below this number has been released or given up on.
    floor: Option<u64>,
    last_error: Option<PacketError>,
}

impl ReceiverCore {
    pub fn new(cache: Arc<IdentityCache>, config: ReceiverConfig, bypass: Arc<dyn BypassSink>) -> Self {
        ReceiverCore {
            cache,
            config,
            bypass,
            counters: Arc::default(),
            assemblies: BTreeMap::new(),
            ready: BTreeMap::new(),
            floor: None,
            last_error: None,
        }
    }

    pub fn counters(&self) -> &Arc<ReceiverCounters> {
        &self.counters
    }

    pub fn config(&self) -> &ReceiverConfig {
        &self.config
    }

    /// Most recent reason a packet or block was rejected.
    pub fn last_error(&self) -> Option<&PacketError> {
        self.last_error.as_ref()
    }

    /// Blocks with at least one section received and not yet released.
    pub fn blocks_in_progress(&self) -> usize {
        self.assemblies.len() + self.ready.len()
    }

    /// Handles one datagram addressed to `dest_port` and returns the blocks
    /// that became releasable.
    pub fn on_datagram(&mut self, dest_port: u16, datagram: &[u8], now: Instant) -> Vec<BlockEntries> {
        bump(&self.counters.packets);
        self.counters.bytes.fetch_add(datagram.len() as u64, Ordering::Relaxed);
        match classify_packet(dest_port, self.config.port, datagram) {
            Classified::Normal(d) => {
                bump(&self.counters.bypassed);
                self.bypass.forward(dest_port, d);
            }
            Classified::Malformed(e) => self.reject(e.into()),
            Classified::Bmac(p) => {
                bump(&self.counters.bmac_packets);
                if let Err(e) = self.on_packet(p, now) {
                    self.reject(e);
                }
            }
        }
        self.poll(now)
    }

    fn reject(&mut self, e: PacketError) {
        bump(&self.counters.malformed);
        self.last_error = Some(e);
    }

    fn on_packet(&mut self, p: SectionPacket, now: Instant) -> Result<(), PacketError> {
        if p.section_type == SectionType::CacheSync {
            if p.payload.len() < 2 {
                return Err(WireError::Truncated.into());
            }
            let id = EncodedId::from_raw(u16::from_be_bytes([p.payload[0], p.payload[1]]));
            self.cache
                .insert(id, &p.payload[2..])
                .map_err(|e| PacketError::CacheSync(id, e.to_string()))?;
            bump(&self.counters.cache_sync);
            return Ok(());
        }
        let n = p.block_number;
        if p.total_sections < 3 || SectionType::at_index(p.section_index, p.total_sections) != p.section_type {
            return Err(PacketError::TypeMismatch);
        }
        let behind = self.floor.is_some_and(|f| n < f) && !self.assemblies.contains_key(&n);
        if behind || self.ready.contains_key(&n) {
            bump(&self.counters.stale);
            return Ok(());
        }
        let asm = self.assemblies.entry(n).or_insert_with(|| Assembly::new(p.total_sections, now));
        if asm.total != p.total_sections {
            return Err(PacketError::TotalMismatch);
        }
        let idx = p.section_index as usize;
        if asm.seen[idx] {
            bump(&self.counters.duplicates);
            return Ok(());
        }

        let (section, ids) = match insert_identities(&p.payload, &p.locators, &self.cache) {
            Ok(v) => v,
            Err(e @ ExtractError::MissingIdentity(_)) => {
                self.assemblies.remove(&n);
                self.retire(n);
                bump(&self.counters.undecodable_blocks);
                self.last_error = Some(e.into());
                return Ok(());
            }
            Err(e) => return Err(e.into()),
        };
        let parts = extract_and_process(p.section_type, &section, &p.pointers, &ids, &self.cache)?;
        match parts {
            SectionParts::Header(h) => {
                if h.number != n {
                    return Err(PacketError::NumberMismatch {
                        expected: n,
                        found: h.number,
                    });
                }
                asm.header = Some(h);
            }
            SectionParts::Tx(t) => asm.txs[idx - 1] = Some(t),
            SectionParts::Metadata(m) => asm.metadata = Some(m),
        }
        asm.hasher.feed(p.section_index, &section);
        asm.seen[idx] = true;
        asm.received += 1;
        if asm.is_complete() {
            let asm = self.assemblies.remove(&n).unwrap();
            self.ready.insert(
                n,
                Ready {
                    entries: asm.into_entries(n),
                    since: now,
                },
            );
        }
        Ok(())
    }

    fn retire(&mut self, n: u64) {
        self.floor = Some(self.floor.map_or(n + 1, |f| f.max(n + 1)));
    }

    /// Expires overdue blocks and returns the blocks now releasable, in
    /// block-number order.
    pub fn poll(&mut self, now: Instant) -> Vec<BlockEntries> {
        let deadline = self.config.deadline;
        let expired: Vec<u64> = self
            .assemblies
            .iter()
            .filter(|(_, a)| now.saturating_duration_since(a.started) >= deadline)
            .map(|(&n, _)| n)
            .collect();
        for n in expired {
            self.assemblies.remove(&n);
            bump(&self.counters.incomplete_blocks);
            self.retire(n);
        }

        let mut out = Vec::new();
        while let Some((&n, ready)) = self.ready.first_key_value() {
            let blocked_by_lower = self.assemblies.first_key_value().is_some_and(|(&a, _)| a < n);
            let in_sequence = self.floor.is_none_or(|f| n <= f);
            let waited = now.saturating_duration_since(ready.since) >= deadline;
            if blocked_by_lower || !(in_sequence || waited) {
                break;
            }
            let ready = self.ready.remove(&n).unwrap();
            self.retire(n);
            bump(&self.counters.blocks_released);
            out.push(ready.entries);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification() {
        let sink = Arc::new(VecSink::default());
        let mut core = ReceiverCore::new(Arc::new(IdentityCache::new()), ReceiverConfig::default(), sink.clone());
        let now = Instant::now();
        assert!(core.on_datagram(53, b"\x00dns", now).is_empty());
        assert!(core.on_datagram(DEFAULT_PORT, &[0xB1, 0x0C, 1], now).is_empty());
        assert!(core.on_datagram(DEFAULT_PORT, b"hello", now).is_empty());
        let c = core.counters().snapshot();
        assert_eq!((c.packets, c.bypassed, c.malformed), (3, 1, 2));
        assert_eq!(sink.take(), vec![(53, b"\x00dns".to_vec())]);
        assert!(matches!(classify_packet(5000, 5000, &[0; 4]), Classified::Malformed(WireError::Short(4))));
    }
}
