//! The block processor.
//!
//! Two block-level stages run concurrently: `block_verify` checks the
//! orderer signature of block n+1 while `block_validate` works on block n.
//! Validation is itself a transaction pipeline:
//!
//! ```text
//!             ┌─ lane 0: tx_verify → tx_vscc ─┐
//! scheduler ──┼─ lane 1: tx_verify → tx_vscc ─┼── collector ── mvcc_commit ── mailbox
//!             └─ ...                         ─┘
//! ```
//!
//! A lane is one thread running lock-step cycles. In each cycle the verify
//! slot checks the client signature of one transaction while the vscc slot
//! checks up to `engines_per_vscc` endorsements of the previous one; the
//! whole cycle is a single engine batch. The vscc slot re-evaluates the
//! policy after every batch and stops issuing once it holds.
//!
//! The scheduler hands each transaction to whichever lane asks first, and
//! starts the next block only after `mvcc_commit` has published the current
//! one.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Instant;

use crossbeam_channel::{bounded, unbounded, Receiver, Sender, TryRecvError};
use serde::{Deserialize, Serialize};

use crate::block::Version;
use crate::engine::SignatureEngine;
use crate::fifo::{BlockFifoEntry, EndsFifoEntry, FifoReaders, TxFifoEntry};
use crate::policy::{PolicySet, RegisterFile};
use crate::results::{BlockStats, ResultMailbox, StageBusy, TxStatus, ValidationResult, VerificationCounts};
use crate::statedb::KvStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Parallel tx_verify + tx_vscc lanes.
    pub lanes: usize,
    /// Endorsements a lane verifies per cycle.
    pub engines_per_vscc: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            lanes: 4,
            engines_per_vscc: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PipelineError {
    #[error("lanes and engines_per_vscc must be at least 1")]
    BadConfig,
    #[error("could not start pipeline thread: {0}")]
    Spawn(String),
}

/// Shared resources of a pipeline instance.
#[derive(Clone)]
pub struct PipelineContext {
    pub store: Arc<KvStore>,
    pub policies: Arc<PolicySet>,
    /// Size of each lane's register file.
    pub num_orgs: usize,
    pub engine: Arc<dyn SignatureEngine>,
    pub mailbox: Arc<ResultMailbox>,
}

struct VerifiedBlock {
    entry: BlockFifoEntry,
    valid: bool,
    started: Instant,
    verify_us: u64,
    verifications: u64,
    tx_fifo_len: usize,
    ends_fifo_len: usize,
}

struct TxJob {
    tx: TxFifoEntry,
    ends: Vec<EndsFifoEntry>,
    block_valid: bool,
}

#[derive(Debug)]
struct LaneOutput {
    block_num: u64,
    tx_num: u32,
    status: TxStatus,
    rdset_size: u32,
    wrset_size: u32,
    tx_verifications: u64,
    end_verifications: u64,
    verify_us: u64,
    vscc_us: u64,
    vscc_wall_us: u64,
    unknown_principals: u64,
    /// The transaction's FIFO data never arrived.
    missing: bool,
}

struct BlockCtx {
    block: VerifiedBlock,
    num_txs: u32,
}

enum ToMvcc {
    Block(BlockCtx),
    Tx(LaneOutput),
}

pub struct PipelineHandle {
    threads: Vec<JoinHandle<()>>,
    mailbox: Arc<ResultMailbox>,
}

impl PipelineHandle {
    /// Waits for every stage to drain after the FIFOs close.
    pub fn join(mut self) {
        self.join_all();
    }

    fn join_all(&mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    pub fn mailbox(&self) -> &Arc<ResultMailbox> {
        &self.mailbox
    }
}

impl Drop for PipelineHandle {
    fn drop(&mut self) {
        if !self.threads.is_empty() {
            self.mailbox.shutdown();
            self.join_all();
        }
    }
}

fn micros(since: Instant) -> u64 {
    since.elapsed().as_micros() as u64
}

fn spawn(name: String, f: impl FnOnce() + Send + 'static) -> Result<JoinHandle<()>, PipelineError> {
    std::thread::Builder::new()
        .name(name)
        .spawn(f)
        .map_err(|e| PipelineError::Spawn(e.to_string()))
}

/// Starts every stage. Results appear in `ctx.mailbox` in block order; the
/// stages exit once the FIFOs are closed and drained, after which the mailbox
/// is shut down.
pub fn spawn_pipeline(
    config: PipelineConfig,
    ctx: PipelineContext,
    fifos: FifoReaders,
) -> Result<PipelineHandle, PipelineError> {
    if config.lanes == 0 || config.engines_per_vscc == 0 {
        return Err(PipelineError::BadConfig);
    }
    let (verified_tx, verified_rx) = bounded::<VerifiedBlock>(0);
    let (job_tx, job_rx) = bounded::<TxJob>(0);
    let (ctx_tx, ctx_rx) = unbounded::<BlockCtx>();
    let (out_tx, out_rx) = unbounded::<LaneOutput>();
    let (mvcc_tx, mvcc_rx) = unbounded::<ToMvcc>();
    let (done_tx, done_rx) = bounded::<()>(1);
    let mut threads = Vec::new();

    {
        let engine = ctx.engine.clone();
        let fifos = fifos.clone();
        threads.push(spawn("block-verify".into(), move || {
            block_verify(&fifos, engine.as_ref(), verified_tx)
        })?);
    }
    {
        let fifos = fifos.clone();
        let out_tx = out_tx.clone();
        threads.push(spawn("tx-scheduler".into(), move || {
            scheduler(&fifos, verified_rx, job_tx, ctx_tx, out_tx, done_rx)
        })?);
    }
    for i in 0..config.lanes {
        let job_rx = job_rx.clone();
        let out_tx = out_tx.clone();
        let engine = ctx.engine.clone();
        let policies = ctx.policies.clone();
        let num_orgs = ctx.num_orgs;
        let engines = config.engines_per_vscc;
        threads.push(spawn(format!("lane-{i}"), move || {
            Lane {
                engine: engine.as_ref(),
                policies: &policies,
                regs: RegisterFile::new(num_orgs),
                engines,
                out: out_tx,
            }
            .run(job_rx)
        })?);
    }
    drop(job_rx);
    drop(out_tx);
    threads.push(spawn("tx-collector".into(), move || collector(ctx_rx, out_rx, mvcc_tx))?);
    {
        let store = ctx.store.clone();
        let mailbox = ctx.mailbox.clone();
        let rd = fifos.rdset.clone();
        let wr = fifos.wrset.clone();
        threads.push(spawn("mvcc-commit".into(), move || {
            mvcc_commit(&store, &mailbox, mvcc_rx, &rd, &wr, done_tx);
            mailbox.shutdown();
        })?);
    }
    Ok(PipelineHandle {
        threads,
        mailbox: ctx.mailbox,
    })
}

fn block_verify(fifos: &FifoReaders, engine: &dyn SignatureEngine, out: Sender<VerifiedBlock>) {
    for entry in fifos.block.iter() {
        let started = Instant::now();
        let tx_fifo_len = fifos.tx.len();
        let ends_fifo_len = fifos.ends.len();
        let valid = engine.verify(&entry.request);
        let verified = VerifiedBlock {
            entry,
            valid,
            started,
            verify_us: micros(started),
            verifications: 1,
            tx_fifo_len,
            ends_fifo_len,
        };
        if out.send(verified).is_err() {
            return;
        }
    }
}

fn scheduler(
    fifos: &FifoReaders,
    blocks: Receiver<VerifiedBlock>,
    jobs: Sender<TxJob>,
    to_collector: Sender<BlockCtx>,
    lane_out: Sender<LaneOutput>,
    block_done: Receiver<()>,
) {
    for block in blocks.iter() {
        let block_num = block.entry.block_num;
        let num_txs = block.entry.num_txs;
        let valid = block.valid;
        if to_collector.send(BlockCtx { block, num_txs }).is_err() {
            return;
        }
        let mut missing_from = None;
        'txs: for i in 0..num_txs {
            let Ok(tx) = fifos.tx.recv() else {
                missing_from = Some(i);
                break;
            };
            let mut ends = Vec::with_capacity(tx.num_ends as usize);
            for _ in 0..tx.num_ends {
                match fifos.ends.recv() {
                    Ok(e) => ends.push(e),
                    Err(_) => {
                        missing_from = Some(i);
                        break 'txs;
                    }
                }
            }
            let job = TxJob {
                tx,
                ends,
                block_valid: valid,
            };
            if jobs.send(job).is_err() {
                return;
            }
        }
        if let Some(first) = missing_from {
            for tx_num in first..num_txs {
                let _ = lane_out.send(LaneOutput {
                    block_num,
                    tx_num,
                    status: TxStatus::SkippedBlockInvalid,
                    rdset_size: 0,
                    wrset_size: 0,
                    tx_verifications: 0,
                    end_verifications: 0,
                    verify_us: 0,
                    vscc_us: 0,
                    vscc_wall_us: 0,
                    unknown_principals: 0,
                    missing: true,
                });
            }
        }
        if block_done.recv().is_err() {
            return;
        }
    }
}

struct VerifySlot {
    job: TxJob,
    verdict: Option<TxStatus>,
    tx_verifications: u64,
    verify_us: u64,
}

struct VsccSlot {
    slot: VerifySlot,
    next: usize,
    started: Instant,
    busy_us: u64,
    verifications: u64,
}

struct Lane<'a> {
    engine: &'a dyn SignatureEngine,
    policies: &'a PolicySet,
    regs: RegisterFile,
    engines: usize,
    out: Sender<LaneOutput>,
}

impl Lane<'_> {
    fn emit(&self, slot: &VerifySlot, status: TxStatus, vscc: Option<&VsccSlot>, unknown_principals: u64) -> bool {
        let tx = &slot.job.tx;
        self.out
            .send(LaneOutput {
                block_num: tx.block_num,
                tx_num: tx.tx_num,
                status,
                rdset_size: tx.rdset_size,
                wrset_size: tx.wrset_size,
                tx_verifications: slot.tx_verifications,
                end_verifications: vscc.map_or(0, |v| v.verifications),
                verify_us: slot.verify_us,
                vscc_us: vscc.map_or(0, |v| v.busy_us),
                vscc_wall_us: vscc.map_or(0, |v| micros(v.started)),
                unknown_principals,
                missing: false,
            })
            .is_ok()
    }

    fn run(mut self, jobs: Receiver<TxJob>) {
        let mut verify: Option<VerifySlot> = None;
        let mut vscc: Option<VsccSlot> = None;
        let mut closed = false;
        loop {
            if verify.is_none() && !closed {
                let job = if vscc.is_none() {
                    jobs.recv().ok()
                } else {
                    match jobs.try_recv() {
                        Ok(j) => Some(j),
                        Err(TryRecvError::Empty) => None,
                        Err(TryRecvError::Disconnected) => None,
                    }
                };
                closed = job.is_none() && vscc.is_none();
                verify = job.map(|job| VerifySlot {
                    job,
                    verdict: None,
                    tx_verifications: 0,
                    verify_us: 0,
                });
            }
            if closed && verify.is_none() && vscc.is_none() {
                return;
            }

            // One cycle: the verify slot's client signature plus one round of
            // endorsements for the vscc slot, as a single engine batch.
            let issue_client = verify
                .as_ref()
                .is_some_and(|v| v.verdict.is_none() && v.job.block_valid);
            let round = vscc
                .as_ref()
                .map_or(0..0, |v| v.next..(v.next + self.engines).min(v.slot.job.ends.len()));
            let mut batch = Vec::with_capacity(1 + round.len());
            if issue_client {
                batch.push(&verify.as_ref().unwrap().job.tx.request);
            }
            if let Some(v) = &vscc {
                batch.extend(v.slot.job.ends[round.clone()].iter().map(|e| &e.request));
            }
            let started = Instant::now();
            let results = if batch.is_empty() {
                Vec::new()
            } else {
                self.engine.verify_batch(&batch)
            };
            let took = micros(started);
            let mut results = results.into_iter();

            if let Some(v) = verify.as_mut().filter(|v| v.verdict.is_none()) {
                v.verdict = Some(if !v.job.block_valid {
                    TxStatus::SkippedBlockInvalid
                } else {
                    v.tx_verifications = 1;
                    v.verify_us = took;
                    if results.next().unwrap_or(false) {
                        TxStatus::Valid
                    } else {
                        TxStatus::InvalidSig
                    }
                });
            }

            if let Some(mut v) = vscc.take() {
                let policy = self.policies.get(v.slot.job.tx.cc_id).expect("checked on entry");
                let unknown_before = self.regs.unknown_principals();
                for (end, ok) in v.slot.job.ends[round.clone()].iter().zip(results.by_ref()) {
                    self.regs.record_result(end.endorser_id, ok);
                }
                v.verifications += round.len() as u64;
                v.busy_us += took;
                v.next = round.end;
                let unknown = self.regs.unknown_principals() - unknown_before;
                let status = if policy.evaluate(&self.regs) {
                    Some(TxStatus::Valid)
                } else if v.next >= v.slot.job.ends.len() {
                    Some(TxStatus::InvalidPolicy)
                } else {
                    None
                };
                match status {
                    Some(s) => {
                        if !self.emit(&v.slot, s, Some(&v), unknown) {
                            return;
                        }
                    }
                    None => vscc = Some(v),
                }
            }

            // Move a checked transaction forward once the vscc slot is free.
            if vscc.is_none() {
                if let Some(slot) = verify.take_if(|v| v.verdict.is_some()) {
                    let verdict = slot.verdict.unwrap();
                    let policy = self.policies.get(slot.job.tx.cc_id);
                    match (verdict, policy) {
                        (TxStatus::Valid, Some(_)) => {
                            self.regs.clear();
                            vscc = Some(VsccSlot {
                                slot,
                                next: 0,
                                started: Instant::now(),
                                busy_us: 0,
                                verifications: 0,
                            });
                            if vscc.as_ref().unwrap().slot.job.ends.is_empty()
                                && !self.emit(&vscc.take().unwrap().slot, TxStatus::InvalidPolicy, None, 0)
                            {
                                return;
                            }
                        }
                        (TxStatus::Valid, None) => {
                            if !self.emit(&slot, TxStatus::InvalidPolicy, None, 0) {
                                return;
                            }
                        }
                        (other, _) => {
                            if !self.emit(&slot, other, None, 0) {
                                return;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn collector(blocks: Receiver<BlockCtx>, outputs: Receiver<LaneOutput>, to_mvcc: Sender<ToMvcc>) {
    for ctx in blocks.iter() {
        let block_num = ctx.block.entry.block_num;
        let num_txs = ctx.num_txs;
        if to_mvcc.send(ToMvcc::Block(ctx)).is_err() {
            return;
        }
        let mut held: BTreeMap<u32, LaneOutput> = BTreeMap::new();
        let mut next = 0u32;
        while next < num_txs {
            let out = match held.remove(&next) {
                Some(o) => o,
                None => match outputs.recv() {
                    Ok(o) => {
                        debug_assert_eq!(o.block_num, block_num);
                        if o.tx_num != next {
                            held.insert(o.tx_num, o);
                            continue;
                        }
                        o
                    }
                    Err(_) => return,
                },
            };
            if to_mvcc.send(ToMvcc::Tx(out)).is_err() {
                return;
            }
            next += 1;
        }
    }
}

fn mvcc_commit(
    store: &KvStore,
    mailbox: &ResultMailbox,
    input: Receiver<ToMvcc>,
    rdsets: &Receiver<crate::fifo::RdsetFifoEntry>,
    wrsets: &Receiver<crate::fifo::WrsetFifoEntry>,
    block_done: Sender<()>,
) {
    let mut input = input.iter();
    while let Some(msg) = input.next() {
        let ToMvcc::Block(ctx) = msg else {
            unreachable!("collector sends a block context first");
        };
        let block = ctx.block;
        let mut flags = Vec::with_capacity(ctx.num_txs as usize);
        let mut busy = StageBusy {
            block_verify_us: block.verify_us,
            ..Default::default()
        };
        let mut counts = VerificationCounts {
            block: block.verifications,
            ..Default::default()
        };
        let mut vscc_wall_us = Vec::with_capacity(ctx.num_txs as usize);
        let mut unknown_principals = 0;
        let mut error: Option<String> = None;

        for _ in 0..ctx.num_txs {
            let Some(ToMvcc::Tx(out)) = input.next() else {
                return;
            };
            let started = Instant::now();
            counts.tx += out.tx_verifications;
            counts.endorsement += out.end_verifications;
            busy.tx_verify_us += out.verify_us;
            busy.tx_vscc_us += out.vscc_us;
            vscc_wall_us.push(out.vscc_wall_us);
            unknown_principals += out.unknown_principals;
            if out.missing {
                error.get_or_insert_with(|| "transaction data missing from FIFOs".into());
                flags.push(TxStatus::SkippedBlockInvalid);
                continue;
            }
            let reads: Vec<_> = (0..out.rdset_size).map_while(|_| rdsets.recv().ok()).collect();
            let writes: Vec<_> = (0..out.wrset_size).map_while(|_| wrsets.recv().ok()).collect();
            if reads.len() != out.rdset_size as usize || writes.len() != out.wrset_size as usize {
                error.get_or_insert_with(|| "read/write set data missing from FIFOs".into());
                flags.push(TxStatus::SkippedBlockInvalid);
                continue;
            }
            let mut status = out.status;
            if error.is_some() {
                status = TxStatus::SkippedBlockInvalid;
            } else if status == TxStatus::Valid {
                if !reads.iter().all(|r| store.version_of(&r.key) == r.version) {
                    status = TxStatus::InvalidMvcc;
                } else if store.would_overflow(writes.iter().map(|w| w.key.as_slice())) {
                    error = Some(format!("state store full ({} keys)", store.capacity()));
                    status = TxStatus::SkippedBlockInvalid;
                } else {
                    let version = Version::new(block.entry.block_num, out.tx_num);
                    for w in writes {
                        store
                            .put(&w.key, w.value, version)
                            .expect("capacity checked before writing");
                    }
                }
            }
            flags.push(status);
            busy.mvcc_commit_us += micros(started);
        }

        let latency_us = block.entry.emitted_at.map_or(0, micros);
        let result = ValidationResult {
            block_num: block.entry.block_num,
            block_valid: block.valid,
            num_txs: block.entry.num_txs,
            flags,
            error,
            stats: BlockStats {
                busy,
                verifications: counts,
                tx_fifo_len: block.tx_fifo_len,
                ends_fifo_len: block.ends_fifo_len,
                latency_us,
                processing_us: micros(block.started),
                vscc_wall_us,
                unknown_principals,
            },
        };
        if mailbox.publish(result).is_err() {
            return;
        }
        if block_done.send(()).is_err() {
            return;
        }
    }
}
