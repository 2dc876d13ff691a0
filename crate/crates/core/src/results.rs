//! Per-block validation results and the blocking mailbox between the block
//! processor and its consumer.
//!
//! With the default depth of one, the producer cannot publish a new result
//! until the previous one has been read.

use std::collections::VecDeque;
use std::io::{self, BufRead, Write};
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};

pub const DEFAULT_MAILBOX_DEPTH: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxStatus {
    Valid,
    InvalidSig,
    InvalidPolicy,
    InvalidMvcc,
    SkippedBlockInvalid,
}

impl TxStatus {
    pub fn is_valid(self) -> bool {
        self == TxStatus::Valid
    }
}

/// Signature verifications performed, by kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationCounts {
    pub block: u64,
    pub tx: u64,
    pub endorsement: u64,
}

impl VerificationCounts {
    pub fn total(&self) -> u64 {
        self.block + self.tx + self.endorsement
    }

    pub fn add(&mut self, o: &VerificationCounts) {
        self.block += o.block;
        self.tx += o.tx;
        self.endorsement += o.endorsement;
    }
}

/// Busy time per stage, in microseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageBusy {
    pub block_verify_us: u64,
    /// Summed over lanes.
    pub tx_verify_us: u64,
    /// Summed over lanes.
    pub tx_vscc_us: u64,
    pub mvcc_commit_us: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BlockStats {
    pub busy: StageBusy,
    pub verifications: VerificationCounts,
    /// Entries waiting in the transaction queue when the block started.
    pub tx_fifo_len: usize,
    /// Entries waiting in the endorsement queue when the block started.
    pub ends_fifo_len: usize,
    /// From the receiver releasing the block to result publication.
    pub latency_us: u64,
    /// From block-level verification start to result publication.
    pub processing_us: u64,
    /// Wall time of each transaction's endorsement phase, by tx number.
    pub vscc_wall_us: Vec<u64>,
    /// Endorsements that named no configured principal.
    pub unknown_principals: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationResult {
    pub block_num: u64,
    pub block_valid: bool,
    pub num_txs: u32,
    pub flags: Vec<TxStatus>,
    /// Set when processing failed (store full, missing FIFO data).
    pub error: Option<String>,
    pub stats: BlockStats,
}

impl ValidationResult {
    pub fn valid_count(&self) -> usize {
        self.flags.iter().filter(|f| f.is_valid()).count()
    }
}

/// Returned by [`ResultMailbox::get_block_data`] after shutdown once every
/// published result has been delivered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("result mailbox shut down")]
pub struct Shutdown;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct MailboxStats {
    pub published: u64,
    pub delivered: u64,
    /// Highest number of unread results ever held.
    pub max_occupancy: usize,
    /// Publishes that had to wait for the consumer.
    pub publish_waits: u64,
    pub publish_wait_us: u64,
}

struct State {
    queue: VecDeque<ValidationResult>,
    shutdown: bool,
    stats: MailboxStats,
    /// A publisher is blocked on a full mailbox.
    waiting: bool,
}

pub struct ResultMailbox {
    depth: usize,
    state: Mutex<State>,
    not_full: Condvar,
    not_empty: Condvar,
}

impl Default for ResultMailbox {
    fn default() -> Self {
        Self::new(DEFAULT_MAILBOX_DEPTH)
    }
}

impl ResultMailbox {
    pub fn new(depth: usize) -> Self {
        ResultMailbox {
            depth: depth.max(1),
            state: Mutex::new(State {
                queue: VecDeque::new(),
                shutdown: false,
                stats: MailboxStats::default(),
                waiting: false,
            }),
            not_full: Condvar::new(),
            not_empty: Condvar::new(),
        }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Blocks while the mailbox is full. Returns `Err` with the result if the
    /// mailbox was shut down.
    pub fn publish(&self, result: ValidationResult) -> Result<(), Box<ValidationResult>> {
        let mut st = self.state.lock();
        if st.queue.len() >= self.depth && !st.shutdown {
            let start = Instant::now();
            st.stats.publish_waits += 1;
            st.waiting = true;
            while st.queue.len() >= self.depth && !st.shutdown {
                self.not_full.wait(&mut st);
            }
            st.waiting = false;
            st.stats.publish_wait_us += start.elapsed().as_micros() as u64;
        }
        if st.shutdown {
            return Err(Box::new(result));
        }
        st.queue.push_back(result);
        st.stats.published += 1;
        st.stats.max_occupancy = st.stats.max_occupancy.max(st.queue.len());
        self.not_empty.notify_one();
        Ok(())
    }

    /// Blocks until a result is available.
    pub fn get_block_data(&self) -> Result<ValidationResult, Shutdown> {
        let mut st = self.state.lock();
        loop {
            if let Some(r) = st.queue.pop_front() {
                st.stats.delivered += 1;
                self.not_full.notify_one();
                return Ok(r);
            }
            if st.shutdown {
                return Err(Shutdown);
            }
            self.not_empty.wait(&mut st);
        }
    }

    /// Like [`get_block_data`](Self::get_block_data) but gives up after
    /// `timeout`, returning `Ok(None)`.
    pub fn get_block_data_timeout(&self, timeout: Duration) -> Result<Option<ValidationResult>, Shutdown> {
        let deadline = Instant::now() + timeout;
        let mut st = self.state.lock();
        loop {
            if let Some(r) = st.queue.pop_front() {
                st.stats.delivered += 1;
                self.not_full.notify_one();
                return Ok(Some(r));
            }
            if st.shutdown {
                return Err(Shutdown);
            }
            if self.not_empty.wait_until(&mut st, deadline).timed_out() && st.queue.is_empty() {
                return if st.shutdown { Err(Shutdown) } else { Ok(None) };
            }
        }
    }

    /// Wakes every waiter. Results already published can still be read.
    pub fn shutdown(&self) {
        let mut st = self.state.lock();
        st.shutdown = true;
        self.not_full.notify_all();
        self.not_empty.notify_all();
    }

    pub fn len(&self) -> usize {
        self.state.lock().queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// True while a publisher is blocked on a full mailbox.
    pub fn publisher_waiting(&self) -> bool {
        self.state.lock().waiting
    }

    pub fn stats(&self) -> MailboxStats {
        self.state.lock().stats
    }
}

pub fn write_jsonl<'a>(out: &mut impl Write, results: impl IntoIterator<Item = &'a ValidationResult>) -> io::Result<()> {
    for r in results {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl(input: impl BufRead) -> io::Result<Vec<ValidationResult>> {
    input
        .lines()
        .filter(|l| !matches!(l, Ok(s) if s.trim().is_empty()))
        .map(|l| serde_json::from_str(&l?).map_err(io::Error::other))
        .collect()
}
