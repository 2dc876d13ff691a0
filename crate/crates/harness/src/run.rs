//! The orderer and validator processes, and the offline oracle check.

use std::fs;
use std::io::BufReader;
use std::net::{SocketAddr, UdpSocket};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use bmac_core::block::{decode_baseline, encode_baseline};
use bmac_core::engine::{EcdsaEngine, SignatureEngine, SyntheticEngine, Truth};
use bmac_core::fifo::fifo_set;
use bmac_core::oracle::validate_block_reference;
use bmac_core::pipeline::{spawn_pipeline, PipelineContext};
use bmac_core::receiver::{bind_receiver_socket, spawn_udp_receiver, NoopSink, ReceiverCore};
use bmac_core::results::{read_jsonl, write_jsonl, ResultMailbox};
use bmac_core::sender::Sender;
use bmac_core::statedb::Snapshot;
use bmac_core::{Block, KvStore, TxStatus, ValidationResult};
use serde::Serialize;

use crate::config::NetworkConfig;
use crate::metrics::{write_block_records, write_summary, Bandwidth, RunMetrics};

/// Sends `blocks` to `dest`, optionally dumping each baseline encoding to
/// `dump_dir`. Bursts of `send_burst` datagrams are separated by
/// `burst_gap` so a receiver on the same host keeps up.
pub fn run_orderer<'a>(
    cfg: &NetworkConfig,
    blocks: impl IntoIterator<Item = &'a Block>,
    dest: SocketAddr,
    dump_dir: Option<&Path>,
) -> Result<RunMetrics> {
    let net = cfg.network()?;
    let sender = Sender::new(Arc::new(net.cache()), cfg.protocol.sender_config());
    let bind: SocketAddr = if dest.is_ipv4() { "0.0.0.0:0" } else { "[::]:0" }.parse()?;
    let socket = UdpSocket::bind(bind).context("binding the orderer socket")?;
    if let Some(dir) = dump_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let burst = cfg.protocol.send_burst;
    let gap = cfg.protocol.burst_gap;
    let started = Instant::now();
    let mut m = RunMetrics::default();
    let mut sent_in_burst = 0;
    for block in blocks {
        let encoded = sender.encode_block(block)?;
        for d in encoded.datagrams() {
            socket.send_to(d, dest).context("sending a datagram")?;
            sent_in_burst += 1;
            if sent_in_burst == burst {
                std::thread::sleep(gap);
                sent_in_burst = 0;
            }
        }
        if let Some(dir) = dump_dir {
            fs::write(block_path(dir, block.number()), encode_baseline(block))?;
        }
        m.blocks += 1;
        m.txs += block.transactions.len() as u64;
        m.bandwidth.packets += (encoded.cache_sync.len() + encoded.sections.len()) as u64;
        m.bandwidth.wire_bytes += encoded.wire_bytes() as u64;
        m.bandwidth.baseline_bytes += encoded.baseline_bytes as u64;
        m.bandwidth.identity_bytes += encoded.identity_bytes as u64;
    }
    m.elapsed_s = started.elapsed().as_secs_f64();
    Ok(m)
}

fn block_path(dir: &Path, number: u64) -> PathBuf {
    dir.join(format!("block_{number:08}.bin"))
}

/// Reads every `block_*.bin` in `dir`, in block-number order.
pub fn load_blocks(dir: &Path) -> Result<Vec<Block>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("block_") && n.ends_with(".bin"))
        })
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let bytes = fs::read(p)?;
            decode_baseline(&bytes).with_context(|| format!("decoding {}", p.display()))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ValidatorOptions {
    pub listen: SocketAddr,
    /// Stop after this many transactions have been validated.
    pub expected_txs: usize,
    /// Give up once no result has arrived for this long.
    pub idle_timeout: Duration,
    /// Where results go; metrics land next to it.
    pub out: Option<PathBuf>,
}

pub struct ValidatorOutcome {
    pub results: Vec<ValidationResult>,
    pub metrics: RunMetrics,
    pub state: Snapshot,
}

fn engine_for(cfg: &NetworkConfig) -> Arc<dyn SignatureEngine> {
    match cfg.pipeline.synthetic_delay {
        Some(d) => Arc::new(SyntheticEngine::new(d, Truth::Crypto)),
        None => Arc::new(EcdsaEngine),
    }
}

/// Receives, validates and collects results until `expected_txs`
/// transactions are done or the stream goes idle. `on_bound` is called with
/// the bound address before the first datagram is read.
pub fn run_validator(
    cfg: &NetworkConfig,
    opts: &ValidatorOptions,
    on_bound: impl FnOnce(SocketAddr),
) -> Result<ValidatorOutcome> {
    let net = cfg.network()?;
    let policies = cfg.policies(&net)?;
    let cache = Arc::new(net.cache());
    let store = Arc::new(KvStore::new(cfg.pipeline.store_capacity));
    let mailbox = Arc::new(ResultMailbox::new(cfg.pipeline.mailbox_depth));
    let (writers, readers) = fifo_set(cfg.pipeline.fifo_capacity);
    let ctx = PipelineContext {
        store: store.clone(),
        policies: Arc::new(policies),
        num_orgs: net.orgs().len(),
        engine: engine_for(cfg),
        mailbox: mailbox.clone(),
    };
    let pipeline = spawn_pipeline(cfg.pipeline.pipeline_config(), ctx, readers)?;

    let socket = bind_receiver_socket(opts.listen).with_context(|| format!("binding {}", opts.listen))?;
    let local = socket.local_addr()?;
    let mut receiver_cfg = cfg.protocol.receiver_config();
    receiver_cfg.port = local.port();
    let core = ReceiverCore::new(cache, receiver_cfg, Arc::new(NoopSink));
    let receiver = spawn_udp_receiver(socket, core, writers)?;
    on_bound(local);

    let mut results = Vec::new();
    let mut txs = 0;
    let mut first: Option<Instant> = None;
    while txs < opts.expected_txs {
        match mailbox.get_block_data_timeout(opts.idle_timeout) {
            Ok(Some(r)) => {
                first.get_or_insert_with(|| {
                    Instant::now() - Duration::from_micros(r.stats.latency_us)
                });
                txs += r.flags.len();
                results.push(r);
            }
            Ok(None) | Err(_) => break,
        }
    }
    let elapsed = first.map_or(Duration::ZERO, |t| t.elapsed());
    let counters = receiver.stop();
    mailbox.shutdown();
    drop(pipeline);

    let mut metrics = RunMetrics::from_results(&results, elapsed);
    metrics.counters = counters;
    metrics.bandwidth = Bandwidth {
        packets: counters.bmac_packets,
        wire_bytes: counters.bytes,
        ..Default::default()
    };
    if let Some(out) = &opts.out {
        write_outputs(out, &results, &metrics)?;
    }
    Ok(ValidatorOutcome {
        results,
        metrics,
        state: store.snapshot(),
    })
}

/// Results as JSON lines at `out`, plus `.blocks.jsonl`, `.metrics.json`
/// and `.summary.csv` siblings.
pub fn write_outputs(out: &Path, results: &[ValidationResult], metrics: &RunMetrics) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(out).with_context(|| format!("creating {}", out.display()))?);
    write_jsonl(&mut f, results)?;
    drop(f);
    let sibling = |suffix: &str| out.with_extension(suffix);
    write_block_records(&sibling("blocks.jsonl"), results)?;
    let label = out.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    write_summary(&sibling("metrics.json"), &sibling("summary.csv"), label, metrics)?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<ValidationResult>> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(read_jsonl(BufReader::new(f))?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Mismatch {
    pub block: u64,
    /// `None` for block-level disagreements.
    pub tx: Option<u32>,
    pub expected: String,
    pub found: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DiffReport {
    pub blocks_checked: usize,
    pub txs_checked: usize,
    /// Blocks the oracle validated that have no result.
    pub missing: Vec<u64>,
    /// Results for blocks not in the stream.
    pub unexpected: Vec<u64>,
    pub mismatches: Vec<Mismatch>,
}

impl DiffReport {
    pub fn is_empty(&self) -> bool {
        self.missing.is_empty() && self.unexpected.is_empty() && self.mismatches.is_empty()
    }
}

/// Validates `blocks` with the reference validator from an empty store and
/// lists every disagreement with `results`.
pub fn compare_with_oracle(cfg: &NetworkConfig, blocks: &[Block], results: &[ValidationResult]) -> Result<DiffReport> {
    let net = cfg.network()?;
    let policies = cfg.policies(&net)?;
    let mut state = Snapshot::new();
    let mut report = DiffReport::default();
    let by_num: std::collections::BTreeMap<u64, &ValidationResult> = results.iter().map(|r| (r.block_num, r)).collect();
    for block in blocks {
        let o = validate_block_reference(block, &mut state, &policies, cfg.pipeline.store_capacity);
        let Some(r) = by_num.get(&o.block_num) else {
            report.missing.push(o.block_num);
            continue;
        };
        report.blocks_checked += 1;
        if r.block_valid != o.block_valid {
            report.mismatches.push(Mismatch {
                block: o.block_num,
                tx: None,
                expected: format!("block_valid={}", o.block_valid),
                found: format!("block_valid={}", r.block_valid),
            });
        }
        if r.flags.len() != o.flags.len() {
            report.mismatches.push(Mismatch {
                block: o.block_num,
                tx: None,
                expected: format!("{} transactions", o.flags.len()),
                found: format!("{} transactions", r.flags.len()),
            });
            continue;
        }
        for (i, (e, f)) in o.flags.iter().zip(&r.flags).enumerate() {
            report.txs_checked += 1;
            if e != f {
                report.mismatches.push(Mismatch {
                    block: o.block_num,
                    tx: Some(i as u32),
                    expected: status_name(*e),
                    found: status_name(*f),
                });
            }
        }
    }
    let known: std::collections::BTreeSet<u64> = blocks.iter().map(Block::number).collect();
    report.unexpected = results
        .iter()
        .map(|r| r.block_num)
        .filter(|n| !known.contains(n))
        .collect();
    Ok(report)
}

fn status_name(s: TxStatus) -> String {
    serde_json::to_value(s)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_else(|| format!("{s:?}"))
}

/// Fails unless `report` is empty, listing the first mismatches.
pub fn ensure_clean(report: &DiffReport) -> Result<()> {
    if report.is_empty() {
        return Ok(());
    }
    let shown: Vec<String> = report
        .mismatches
        .iter()
        .take(10)
        .map(|m| match m.tx {
            Some(t) => format!("block {} tx {}: expected {}, found {}", m.block, t, m.expected, m.found),
            None => format!("block {}: expected {}, found {}", m.block, m.expected, m.found),
        })
        .collect();
    bail!(
        "{} mismatches, {} missing blocks, {} unexpected blocks\n{}",
        report.mismatches.len(),
        report.missing.len(),
        report.unexpected.len(),
        shown.join("\n")
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::generate_workload;

    #[test]
    fn dumped_blocks_reload_and_diff_is_reported() {
        let mut cfg = NetworkConfig::default();
        cfg.workload.total_txs = 20;
        cfg.workload.block_size = 10;
        let blocks: Vec<Block> = generate_workload(&cfg, 1).unwrap().map(|g| g.block).collect();
        let dir = tempfile::tempdir().unwrap();
        // Nobody listens on the destination; UDP does not care.
        let sink = UdpSocket::bind("127.0.0.1:0").unwrap();
        let m = run_orderer(&cfg, &blocks, sink.local_addr().unwrap(), Some(dir.path())).unwrap();
        assert_eq!(m.blocks, 2);
        assert!(m.bandwidth.ratio() > 2.0);
        let back = load_blocks(dir.path()).unwrap();
        assert_eq!(back, blocks);

        let mut results: Vec<ValidationResult> = blocks
            .iter()
            .map(|b| ValidationResult {
                block_num: b.number(),
                block_valid: true,
                num_txs: b.transactions.len() as u32,
                flags: vec![TxStatus::Valid; b.transactions.len()],
                error: None,
                stats: Default::default(),
            })
            .collect();
        assert!(compare_with_oracle(&cfg, &blocks, &results).unwrap().is_empty());
        results[1].flags[3] = TxStatus::InvalidMvcc;
        results.remove(0);
        let report = compare_with_oracle(&cfg, &blocks, &results).unwrap();
        assert_eq!(report.missing, vec![1]);
        assert_eq!(
            report.mismatches,
            vec![Mismatch {
                block: 2,
                tx: Some(3),
                expected: "valid".into(),
                found: "invalid_mvcc".into()
            }]
        );
        assert!(ensure_clean(&report).unwrap_err().to_string().contains("block 2 tx 3"));
    }
}
