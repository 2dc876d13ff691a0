//! YAML network and experiment configuration.

use std::collections::HashSet;
use std::path::Path;
use std::time::Duration;

use bmac_core::identity::{Role, DEFAULT_CERT_SIZE};
use bmac_core::network::{Network, NetworkError, ORDERER_ORG};
use bmac_core::pipeline::PipelineConfig;
use bmac_core::policy::{PolicyError, PolicySet};
use bmac_core::receiver::{ReceiverConfig, DEFAULT_REASSEMBLY_DEADLINE};
use bmac_core::sender::SenderConfig;
use bmac_core::statedb::DEFAULT_STORE_CAPACITY;
use bmac_core::wire::{DEFAULT_MAX_FRAME, DEFAULT_PORT};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Yaml(#[from] serde_yaml::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    /// Seeds key generation and the workload.
    pub seed: u64,
    pub cert_size: usize,
    pub orgs: Vec<OrgConfig>,
    pub chaincodes: Vec<ChaincodeConfig>,
    pub pipeline: PipelineSettings,
    pub protocol: ProtocolSettings,
    pub workload: WorkloadSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrgConfig {
    pub name: String,
    #[serde(default = "default_nodes")]
    pub nodes: Vec<NodeConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub role: Role,
    #[serde(default)]
    pub seq: u8,
}

fn default_nodes() -> Vec<NodeConfig> {
    vec![
        NodeConfig { role: Role::Peer, seq: 0 },
        NodeConfig { role: Role::Client, seq: 0 },
    ]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChaincodeConfig {
    pub id: u16,
    #[serde(default)]
    pub name: String,
    pub policy: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSettings {
    pub lanes: usize,
    pub engines_per_vscc: usize,
    pub mailbox_depth: usize,
    /// Capacity of each FIFO, in entries.
    pub fifo_capacity: usize,
    pub store_capacity: usize,
    /// Replace ECDSA with a fixed-latency engine, e.g. `360us`.
    #[serde(with = "opt_duration")]
    pub synthetic_delay: Option<Duration>,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        let p = PipelineConfig::default();
        PipelineSettings {
            lanes: p.lanes,
            engines_per_vscc: p.engines_per_vscc,
            mailbox_depth: bmac_core::results::DEFAULT_MAILBOX_DEPTH,
            fifo_capacity: bmac_core::fifo::DEFAULT_FIFO_CAPACITY,
            store_capacity: DEFAULT_STORE_CAPACITY,
            synthetic_delay: None,
        }
    }
}

impl PipelineSettings {
    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            lanes: self.lanes,
            engines_per_vscc: self.engines_per_vscc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolSettings {
    pub port: u16,
    pub max_frame: usize,
    #[serde(with = "duration_text")]
    pub reassembly_deadline: Duration,
    /// Datagrams sent back to back before the sender pauses.
    pub send_burst: usize,
    #[serde(with = "duration_text")]
    pub burst_gap: Duration,
}

impl Default for ProtocolSettings {
    fn default() -> Self {
        ProtocolSettings {
            port: DEFAULT_PORT,
            max_frame: DEFAULT_MAX_FRAME,
            reassembly_deadline: DEFAULT_REASSEMBLY_DEADLINE,
            send_burst: 64,
            burst_gap: Duration::from_micros(500),
        }
    }
}

impl ProtocolSettings {
    pub fn sender_config(&self) -> SenderConfig {
        SenderConfig {
            max_frame: self.max_frame,
            register_unknown: true,
        }
    }

    pub fn receiver_config(&self) -> ReceiverConfig {
        ReceiverConfig {
            port: self.port,
            deadline: self.reassembly_deadline,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Smallbank,
    Drm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadSettings {
    pub profile: Profile,
    pub cc_id: u16,
    pub block_size: usize,
    pub total_txs: usize,
    /// Honest transactions are endorsed by the first peer of this many
    /// application orgs, in config order.
    pub ends_per_tx: usize,
    /// Smallbank accounts; each has a checking and a savings key.
    pub accounts: usize,
    /// Fraction of smallbank transactions that split a payment.
    pub split_rate: f64,
    /// Write-set size of a split payment.
    pub split_n: usize,
    /// Digital assets in the drm profile.
    pub assets: usize,
    pub drm_reads: usize,
    pub drm_writes: usize,
    pub invalid_sig_rate: f64,
    pub policy_fail_rate: f64,
    pub conflict_rate: f64,
}

impl Default for WorkloadSettings {
    fn default() -> Self {
        WorkloadSettings {
            profile: Profile::Smallbank,
            cc_id: 1,
            block_size: 100,
            total_txs: 15_000,
            ends_per_tx: 2,
            accounts: 1000,
            split_rate: 0.0,
            split_n: 4,
            assets: 1000,
            drm_reads: 1,
            drm_writes: 1,
            invalid_sig_rate: 0.0,
            policy_fail_rate: 0.0,
            conflict_rate: 0.0,
        }
    }
}

impl WorkloadSettings {
    /// Distinct keys the workload can touch.
    pub fn keyspace(&self) -> usize {
        match self.profile {
            Profile::Smallbank => 2 * self.accounts,
            Profile::Drm => self.assets,
        }
    }

    pub fn blocks(&self) -> usize {
        self.total_txs.div_ceil(self.block_size.max(1))
    }
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            seed: 1,
            cert_size: DEFAULT_CERT_SIZE,
            orgs: (1..=2)
                .map(|i| OrgConfig {
                    name: format!("Org{i}"),
                    nodes: default_nodes(),
                })
                .collect(),
            chaincodes: vec![ChaincodeConfig {
                id: 1,
                name: "smallbank".into(),
                policy: "Org1 & Org2".into(),
            }],
            pipeline: PipelineSettings::default(),
            protocol: ProtocolSettings::default(),
            workload: WorkloadSettings::default(),
        }
    }
}

impl NetworkConfig {
    pub fn from_yaml(text: &str) -> Result<Self, ConfigError> {
        let cfg: NetworkConfig = serde_yaml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_yaml(&text)
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("config serializes")
    }

    /// `n` orgs with one peer and one client each and the given chaincodes.
    pub fn with_orgs(n: usize, chaincodes: &[(u16, &str)]) -> Self {
        NetworkConfig {
            orgs: (1..=n)
                .map(|i| OrgConfig {
                    name: format!("Org{i}"),
                    nodes: default_nodes(),
                })
                .collect(),
            chaincodes: chaincodes
                .iter()
                .map(|(id, p)| ChaincodeConfig {
                    id: *id,
                    name: format!("cc{id}"),
                    policy: p.to_string(),
                })
                .collect(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.orgs.is_empty() {
            return Err(invalid("at least one org is required"));
        }
        let mut names = HashSet::new();
        for org in &self.orgs {
            if org.name == ORDERER_ORG {
                return Err(invalid(format!("{ORDERER_ORG} is reserved for the ordering service")));
            }
            if !names.insert(org.name.as_str()) {
                return Err(invalid(format!("org {} listed twice", org.name)));
            }
            if org.nodes.iter().any(|n| n.role == Role::Orderer) {
                return Err(invalid(format!("org {} declares an orderer", org.name)));
            }
        }
        if self.chaincodes.is_empty() {
            return Err(invalid("at least one chaincode is required"));
        }
        let mut ids = HashSet::new();
        for cc in &self.chaincodes {
            if !ids.insert(cc.id) {
                return Err(invalid(format!("chaincode {} listed twice", cc.id)));
            }
        }
        let p = &self.pipeline;
        if p.lanes == 0 || p.engines_per_vscc == 0 || p.mailbox_depth == 0 || p.fifo_capacity == 0 {
            return Err(invalid("pipeline sizes must be at least 1"));
        }
        if self.protocol.send_burst == 0 {
            return Err(invalid("protocol.send_burst must be at least 1"));
        }

        let net = self.network()?;
        let policies = self.policies(&net)?;
        let w = &self.workload;
        let Some(policy) = policies.expr(w.cc_id) else {
            return Err(invalid(format!("workload chaincode {} is not configured", w.cc_id)));
        };
        if !(1..=bmac_core::block::DEFAULT_MAX_TXS).contains(&w.block_size) {
            return Err(invalid(format!(
                "block_size must be in 1..={}",
                bmac_core::block::DEFAULT_MAX_TXS
            )));
        }
        let peers = self.endorsing_orgs();
        if w.ends_per_tx == 0 || w.ends_per_tx > peers.len() {
            return Err(invalid(format!(
                "ends_per_tx must be in 1..={} (orgs with a peer)",
                peers.len()
            )));
        }
        let honest: HashSet<&str> = peers[..w.ends_per_tx].iter().map(String::as_str).collect();
        if !policy.eval(&|pr| pr.role == Role::Peer && honest.contains(pr.org.as_str())) {
            return Err(invalid(format!(
                "endorsements from {:?} do not satisfy the policy of chaincode {}",
                &peers[..w.ends_per_tx],
                w.cc_id
            )));
        }
        for (name, r) in [
            ("split_rate", w.split_rate),
            ("invalid_sig_rate", w.invalid_sig_rate),
            ("policy_fail_rate", w.policy_fail_rate),
            ("conflict_rate", w.conflict_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(invalid(format!("{name} must be in [0, 1]")));
            }
        }
        if w.invalid_sig_rate + w.policy_fail_rate + w.conflict_rate > 1.0 {
            return Err(invalid("injection rates sum to more than 1"));
        }
        match w.profile {
            Profile::Smallbank => {
                if w.accounts < 2 {
                    return Err(invalid("smallbank needs at least 2 accounts"));
                }
                if w.split_rate > 0.0 && (w.split_n == 0 || w.split_n > w.accounts) {
                    return Err(invalid("split_n must be in 1..=accounts"));
                }
            }
            Profile::Drm => {
                if w.assets == 0 || w.drm_writes == 0 {
                    return Err(invalid("drm needs at least one asset and one write per tx"));
                }
                if w.drm_reads > w.assets || w.drm_writes > w.assets {
                    return Err(invalid("drm read/write counts exceed the asset count"));
                }
            }
        }
        if w.keyspace() > p.store_capacity {
            return Err(invalid(format!(
                "workload keyspace of {} keys exceeds the store capacity of {}",
                w.keyspace(),
                p.store_capacity
            )));
        }
        Ok(())
    }

    /// The orderer plus every configured node, with keys derived from the
    /// seed.
    pub fn network(&self) -> Result<Network, ConfigError> {
        let mut net = Network::new(self.seed, self.cert_size)?;
        for org in &self.orgs {
            for n in &org.nodes {
                net.add_member(&org.name, n.role, n.seq)?;
            }
        }
        Ok(net)
    }

    pub fn policies(&self, net: &Network) -> Result<PolicySet, ConfigError> {
        Ok(net.policy_set(self.chaincodes.iter().map(|c| (c.id, c.policy.as_str())))?)
    }

    /// Orgs with a `peer0`, in config order.
    pub fn endorsing_orgs(&self) -> Vec<String> {
        self.orgs
            .iter()
            .filter(|o| o.nodes.iter().any(|n| n.role == Role::Peer && n.seq == 0))
            .map(|o| o.name.clone())
            .collect()
    }
}

mod duration_text {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&humantime::format_duration(*d).to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let text = String::deserialize(d)?;
        humantime::parse_duration(&text).map_err(serde::de::Error::custom)
    }
}

mod opt_duration {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Option<Duration>, s: S) -> Result<S::Ok, S::Error> {
        match d {
            Some(d) => super::duration_text::serialize(d, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Duration>, D::Error> {
        let text = Option::<String>::deserialize(d)?;
        text.map(|t| humantime::parse_duration(&t).map_err(serde::de::Error::custom))
            .transpose()
    }
}
