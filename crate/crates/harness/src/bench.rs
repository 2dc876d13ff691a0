//! In-process experiments: blocks go through the sender and the receiver
//! core without a socket, and the resulting FIFO entries are replayed into
//! a fresh pipeline for each configuration under test.

use std::sync::Arc;
use std::time::{Duration, Instant};

use bmac_core::engine::SignatureEngine;
use bmac_core::fifo::{fifo_set, BlockEntries, DEFAULT_FIFO_CAPACITY};
use bmac_core::pipeline::{spawn_pipeline, PipelineConfig, PipelineContext};
use bmac_core::policy::PolicySet;
use bmac_core::receiver::{CounterSnapshot, NoopSink, ReceiverConfig, ReceiverCore};
use bmac_core::results::{MailboxStats, ResultMailbox, DEFAULT_MAILBOX_DEPTH};
use bmac_core::sender::{Sender, SenderConfig, SenderError};
use bmac_core::statedb::{Snapshot, DEFAULT_STORE_CAPACITY};
use bmac_core::{Block, IdentityCache, KvStore, TxStatus, ValidationResult};

use crate::metrics::{Bandwidth, RunMetrics};

/// FIFO entries produced by the receiver, plus what crossing the wire cost.
#[derive(Debug, Clone, Default)]
pub struct WireReplay {
    pub entries: Vec<BlockEntries>,
    pub bandwidth: Bandwidth,
    pub counters: CounterSnapshot,
}

/// Encodes every block with a sender whose cache knows only the org
/// directory, so identities are announced as they first appear, and feeds
/// the datagrams in order to a receiver with an equally cold cache.
pub fn through_wire(blocks: &[Block], orgs: &[String]) -> Result<WireReplay, SenderError> {
    let sender = Sender::new(Arc::new(IdentityCache::with_orgs(orgs.iter().cloned())), SenderConfig::default());
    let receiver_cache = Arc::new(IdentityCache::with_orgs(orgs.iter().cloned()));
    let config = ReceiverConfig::default();
    let mut core = ReceiverCore::new(receiver_cache, config, Arc::new(NoopSink));
    let mut out = WireReplay::default();
    for block in blocks {
        let encoded = sender.encode_block(block)?;
        out.bandwidth.packets += (encoded.cache_sync.len() + encoded.sections.len()) as u64;
        out.bandwidth.wire_bytes += encoded.wire_bytes() as u64;
        out.bandwidth.baseline_bytes += encoded.baseline_bytes as u64;
        out.bandwidth.identity_bytes += encoded.identity_bytes as u64;
        for d in encoded.datagrams() {
            out.entries.extend(core.on_datagram(config.port, d, Instant::now()));
        }
    }
    out.entries.extend(core.poll(Instant::now() + config.deadline));
    out.counters = core.counters().snapshot();
    Ok(out)
}

/// Everything a pipeline run needs besides its configuration and engine.
#[derive(Clone)]
pub struct BenchEnv {
    pub policies: Arc<PolicySet>,
    pub num_orgs: usize,
    pub store_capacity: usize,
    pub mailbox_depth: usize,
    pub fifo_capacity: usize,
}

impl BenchEnv {
    pub fn new(policies: PolicySet, num_orgs: usize) -> Self {
        BenchEnv {
            policies: Arc::new(policies),
            num_orgs,
            store_capacity: DEFAULT_STORE_CAPACITY,
            mailbox_depth: DEFAULT_MAILBOX_DEPTH,
            fifo_capacity: DEFAULT_FIFO_CAPACITY,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub results: Vec<ValidationResult>,
    pub state: Snapshot,
    /// From the first FIFO write to the last result read.
    pub elapsed: Duration,
    pub mailbox: MailboxStats,
}

impl PipelineRun {
    pub fn txs(&self) -> usize {
        self.results.iter().map(|r| r.flags.len()).sum()
    }

    pub fn throughput(&self) -> f64 {
        self.txs() as f64 / self.elapsed.as_secs_f64()
    }

    pub fn flags(&self) -> Vec<Vec<TxStatus>> {
        self.results.iter().map(|r| r.flags.clone()).collect()
    }

    pub fn metrics(&self) -> RunMetrics {
        RunMetrics::from_results(&self.results, self.elapsed)
    }

    /// Per-transaction endorsement-phase wall times, in microseconds.
    pub fn vscc_wall_us(&self) -> Vec<u64> {
        self.results.iter().flat_map(|r| r.stats.vscc_wall_us.iter().copied()).collect()
    }
}

/// Replays `entries` into a fresh pipeline and store and collects every
/// result.
pub fn run_pipeline(
    entries: &[BlockEntries],
    config: PipelineConfig,
    engine: Arc<dyn SignatureEngine>,
    env: &BenchEnv,
) -> PipelineRun {
    let store = Arc::new(KvStore::new(env.store_capacity));
    let mailbox = Arc::new(ResultMailbox::new(env.mailbox_depth));
    let (writers, readers) = fifo_set(env.fifo_capacity);
    let ctx = PipelineContext {
        store: store.clone(),
        policies: env.policies.clone(),
        num_orgs: env.num_orgs,
        engine,
        mailbox: mailbox.clone(),
    };
    let handle = spawn_pipeline(config, ctx, readers).expect("valid pipeline config");
    let entries = entries.to_vec();
    let started = Instant::now();
    let feeder = std::thread::spawn(move || {
        for mut e in entries {
            if let Some(b) = e.block.as_mut() {
                b.emitted_at = Some(Instant::now());
            }
            if writers.write_block(e).is_err() {
                return;
            }
        }
    });
    let mut results = Vec::new();
    while let Ok(r) = mailbox.get_block_data() {
        results.push(r);
    }
    let elapsed = started.elapsed();
    feeder.join().expect("feeder thread");
    handle.join();
    PipelineRun {
        results,
        state: store.snapshot(),
        elapsed,
        mailbox: mailbox.stats(),
    }
}
