//! Receives blocks over UDP, validates them and writes the results.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use anyhow::{Context, Result};
use bmac_harness::{run_validator, NetworkConfig, ValidatorOptions};
use clap::Parser;

#[derive(Parser)]
#[command(about = "Validate blocks received over UDP")]
struct Args {
    #[arg(long)]
    config: PathBuf,
    /// Address to listen on; `:5000` means every interface.
    #[arg(long, default_value = ":5000")]
    listen: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    lanes: Option<usize>,
    #[arg(long)]
    engines: Option<usize>,
    /// Fixed verification latency instead of real ECDSA timing, e.g. 360us.
    #[arg(long, value_parser = humantime::parse_duration)]
    synthetic_delay: Option<Duration>,
    /// Transactions to wait for; defaults to the workload's count.
    #[arg(long)]
    txs: Option<usize>,
    #[arg(long, default_value = "10s", value_parser = humantime::parse_duration)]
    idle_timeout: Duration,
}

fn parse_listen(s: &str) -> Result<SocketAddr> {
    let full = if s.starts_with(':') { format!("0.0.0.0{s}") } else { s.to_string() };
    full.parse().with_context(|| format!("bad listen address {s}"))
}

fn main() -> Result<()> {
    let args = Args::parse();
    let mut cfg = NetworkConfig::load(&args.config)?;
    if let Some(l) = args.lanes {
        cfg.pipeline.lanes = l;
    }
    if let Some(e) = args.engines {
        cfg.pipeline.engines_per_vscc = e;
    }
    if args.synthetic_delay.is_some() {
        cfg.pipeline.synthetic_delay = args.synthetic_delay;
    }
    cfg.validate()?;
    let opts = ValidatorOptions {
        listen: parse_listen(&args.listen)?,
        expected_txs: args.txs.unwrap_or(cfg.workload.total_txs),
        idle_timeout: args.idle_timeout,
        out: Some(args.out.clone()),
    };
    let outcome = run_validator(&cfg, &opts, |addr| eprintln!("listening on {addr}"))?;
    let m = &outcome.metrics;
    println!(
        "validated {} blocks ({} txs, {} valid) in {:.2}s: {:.0} tps, latency p50 {:.2} ms p99 {:.2} ms, {} verifications, {} incomplete blocks, {} malformed packets",
        m.blocks,
        m.txs,
        m.statuses.valid,
        m.elapsed_s,
        m.throughput_tps,
        m.latency.p50_ms,
        m.latency.p99_ms,
        m.verifications.total(),
        m.counters.incomplete_blocks,
        m.counters.malformed
    );
    for e in &m.errors {
        eprintln!("error: {e}");
    }
    Ok(())
}
