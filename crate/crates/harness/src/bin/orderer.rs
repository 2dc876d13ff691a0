//! Generates a block stream from the config and sends it to a validator.

use std::net::{SocketAddr, ToSocketAddrs};
use std::path::PathBuf;

use anyhow::{Context, Result};
use bmac_harness::{generate_workload, run_orderer, NetworkConfig};
use clap::Parser;

#[derive(Parser)]
#[command(about = "Send a generated block stream over UDP")]
struct Args {
    #[arg(long)]
    config: PathBuf,
    /// Blocks to send; defaults to the workload's transaction count.
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    block_size: Option<usize>,
    #[arg(long)]
    dest: String,
    /// Also write each block's baseline encoding here.
    #[arg(long)]
    baseline_dump: Option<PathBuf>,
    /// Workload seed; defaults to the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> Result<()> {
    let args = Args::parse();
    let mut cfg = NetworkConfig::load(&args.config)?;
    if let Some(b) = args.block_size {
        cfg.workload.block_size = b;
    }
    if let Some(n) = args.blocks {
        cfg.workload.total_txs = n * cfg.workload.block_size;
    }
    let dest: SocketAddr = args
        .dest
        .to_socket_addrs()
        .with_context(|| format!("resolving {}", args.dest))?
        .next()
        .context("destination resolves to no address")?;
    let blocks: Vec<_> = generate_workload(&cfg, args.seed.unwrap_or(cfg.seed))?
        .map(|g| g.block)
        .collect();
    let m = run_orderer(&cfg, &blocks, dest, args.baseline_dump.as_deref())?;
    println!(
        "sent {} blocks ({} txs) in {:.2}s: {} packets, {} wire bytes, {} baseline bytes, ratio {:.2}, identities {:.1}%",
        m.blocks,
        m.txs,
        m.elapsed_s,
        m.bandwidth.packets,
        m.bandwidth.wire_bytes,
        m.bandwidth.baseline_bytes,
        m.bandwidth.ratio(),
        100.0 * m.bandwidth.identity_share()
    );
    Ok(())
}
