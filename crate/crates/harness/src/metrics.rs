//! Run metrics: throughput, block latency, bandwidth and verification
//! counts, written as JSON lines plus a one-row CSV summary.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use bmac_core::receiver::CounterSnapshot;
use bmac_core::results::{TxStatus, ValidationResult, VerificationCounts};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
}

impl LatencySummary {
    pub fn from_micros(samples: &[u64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut v = samples.to_vec();
        v.sort_unstable();
        let ms = |us: u64| us as f64 / 1000.0;
        let at = |q: f64| ms(v[((v.len() - 1) as f64 * q).round() as usize]);
        LatencySummary {
            mean_ms: v.iter().sum::<u64>() as f64 / v.len() as f64 / 1000.0,
            p50_ms: at(0.50),
            p95_ms: at(0.95),
            p99_ms: at(0.99),
            max_ms: ms(*v.last().unwrap()),
        }
    }
}

/// Median of `samples`; zero when empty.
pub fn median(samples: &[u64]) -> u64 {
    if samples.is_empty() {
        return 0;
    }
    let mut v = samples.to_vec();
    v.sort_unstable();
    v[v.len() / 2]
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Bandwidth {
    pub packets: u64,
    pub wire_bytes: u64,
    pub baseline_bytes: u64,
    pub identity_bytes: u64,
}

impl Bandwidth {
    /// Baseline bytes over wire bytes.
    pub fn ratio(&self) -> f64 {
        if self.wire_bytes == 0 {
            0.0
        } else {
            self.baseline_bytes as f64 / self.wire_bytes as f64
        }
    }

    /// Share of the baseline encoding taken by certificates.
    pub fn identity_share(&self) -> f64 {
        if self.baseline_bytes == 0 {
            0.0
        } else {
            self.identity_bytes as f64 / self.baseline_bytes as f64
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StatusCounts {
    pub valid: u64,
    pub invalid_sig: u64,
    pub invalid_policy: u64,
    pub invalid_mvcc: u64,
    pub skipped_block_invalid: u64,
}

impl StatusCounts {
    pub fn add(&mut self, s: TxStatus) {
        match s {
            TxStatus::Valid => self.valid += 1,
            TxStatus::InvalidSig => self.invalid_sig += 1,
            TxStatus::InvalidPolicy => self.invalid_policy += 1,
            TxStatus::InvalidMvcc => self.invalid_mvcc += 1,
            TxStatus::SkippedBlockInvalid => self.skipped_block_invalid += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.valid + self.invalid_sig + self.invalid_policy + self.invalid_mvcc + self.skipped_block_invalid
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub blocks: u64,
    pub txs: u64,
    pub statuses: StatusCounts,
    pub elapsed_s: f64,
    /// Transactions validated per second, ledger commit excluded.
    pub throughput_tps: f64,
    pub latency: LatencySummary,
    pub bandwidth: Bandwidth,
    pub verifications: VerificationCounts,
    pub counters: CounterSnapshot,
    pub errors: Vec<String>,
}

impl RunMetrics {
    /// Metrics over `results` collected in `elapsed` wall time.
    pub fn from_results(results: &[ValidationResult], elapsed: Duration) -> Self {
        let mut m = RunMetrics {
            blocks: results.len() as u64,
            elapsed_s: elapsed.as_secs_f64(),
            ..Default::default()
        };
        let mut latencies = Vec::with_capacity(results.len());
        for r in results {
            m.txs += r.flags.len() as u64;
            r.flags.iter().for_each(|f| m.statuses.add(*f));
            m.verifications.add(&r.stats.verifications);
            latencies.push(r.stats.latency_us);
            if let Some(e) = &r.error {
                m.errors.push(format!("block {}: {e}", r.block_num));
            }
        }
        m.latency = LatencySummary::from_micros(&latencies);
        if m.elapsed_s > 0.0 {
            m.throughput_tps = m.txs as f64 / m.elapsed_s;
        }
        m
    }
}

/// One JSON line per block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub block_num: u64,
    pub num_txs: u32,
    pub valid_txs: usize,
    pub latency_ms: f64,
    pub processing_ms: f64,
    pub verifications: VerificationCounts,
}

impl BlockRecord {
    pub fn new(r: &ValidationResult) -> Self {
        BlockRecord {
            block_num: r.block_num,
            num_txs: r.num_txs,
            valid_txs: r.valid_count(),
            latency_ms: r.stats.latency_us as f64 / 1000.0,
            processing_ms: r.stats.processing_us as f64 / 1000.0,
            verifications: r.stats.verifications,
        }
    }
}

pub fn write_block_records(path: &Path, results: &[ValidationResult]) -> io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in results {
        serde_json::to_writer(&mut out, &BlockRecord::new(r))?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

#[derive(Debug, Serialize)]
struct SummaryRow<'a> {
    label: &'a str,
    blocks: u64,
    txs: u64,
    valid: u64,
    elapsed_s: f64,
    throughput_tps: f64,
    latency_mean_ms: f64,
    latency_p50_ms: f64,
    latency_p99_ms: f64,
    wire_bytes: u64,
    baseline_bytes: u64,
    bandwidth_ratio: f64,
    identity_share: f64,
    verifications: u64,
    packets: u64,
    malformed: u64,
    incomplete_blocks: u64,
}

/// Writes `metrics` as pretty JSON and as a single-row CSV.
pub fn write_summary(json_path: &Path, csv_path: &Path, label: &str, m: &RunMetrics) -> io::Result<()> {
    std::fs::write(json_path, serde_json::to_vec_pretty(m)?)?;
    let mut w = csv::Writer::from_path(csv_path)?;
    w.serialize(SummaryRow {
        label,
        blocks: m.blocks,
        txs: m.txs,
        valid: m.statuses.valid,
        elapsed_s: m.elapsed_s,
        throughput_tps: m.throughput_tps,
        latency_mean_ms: m.latency.mean_ms,
        latency_p50_ms: m.latency.p50_ms,
        latency_p99_ms: m.latency.p99_ms,
        wire_bytes: m.bandwidth.wire_bytes,
        baseline_bytes: m.bandwidth.baseline_bytes,
        bandwidth_ratio: m.bandwidth.ratio(),
        identity_share: m.bandwidth.identity_share(),
        verifications: m.verifications.total(),
        packets: m.counters.packets.max(m.bandwidth.packets),
        malformed: m.counters.malformed,
        incomplete_blocks: m.counters.incomplete_blocks,
    })
    .map_err(io::Error::other)?;
    w.flush()
}
