//! Benchmark harness: configuration, deterministic workloads, the orderer
//! and validator processes, metrics, and in-process experiments.

pub mod adversarial;
pub mod bench;
pub mod config;
pub mod metrics;
pub mod run;
pub mod workload;

pub use config::{ConfigError, NetworkConfig};
pub use metrics::RunMetrics;
pub use run::{compare_with_oracle, run_orderer, run_validator, DiffReport, ValidatorOptions};
pub use workload::{generate_workload, GeneratedBlock, Workload};
