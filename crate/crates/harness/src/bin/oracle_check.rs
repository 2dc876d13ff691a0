//! Compares a validator's results with the reference validator.

use std::path::PathBuf;

use anyhow::Result;
use bmac_harness::run::{ensure_clean, load_blocks, read_results};
use bmac_harness::{compare_with_oracle, NetworkConfig};
use clap::Parser;

#[derive(Parser)]
#[command(about = "Check validation results against the sequential reference")]
struct Args {
    #[arg(long)]
    config: PathBuf,
    /// Directory of baseline-encoded blocks written by the orderer.
    #[arg(long)]
    blocks: PathBuf,
    #[arg(long)]
    results: PathBuf,
    /// Print the full report as JSON.
    #[arg(long)]
    json: bool,
}

fn main() -> Result<()> {
    let args = Args::parse();
    let cfg = NetworkConfig::load(&args.config)?;
    let blocks = load_blocks(&args.blocks)?;
    let results = read_results(&args.results)?;
    let report = compare_with_oracle(&cfg, &blocks, &results)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    }
    println!(
        "checked {} blocks, {} txs: {} mismatches, {} missing, {} unexpected",
        report.blocks_checked,
        report.txs_checked,
        report.mismatches.len(),
        report.missing.len(),
        report.unexpected.len()
    );
    ensure_clean(&report)
}
