//! Deterministic smallbank and drm block streams.
//!
//! The generator tracks the committed version of every key, so honest reads
//! carry current versions and it can predict each transaction's outcome.
//! Invalid transactions are injected at configured rates: a corrupted client
//! signature, an endorsement set that misses the policy, or a read that
//! conflicts with an earlier write in the same block.

use std::collections::{HashMap, HashSet};

use bmac_core::block::{
    encode_header_section, endorsement_digest, sha256, tx_digest, ReadItem, Response, WriteItem,
};
use bmac_core::engine::TruthTable;
use bmac_core::fifo::VerifyRequest;
use bmac_core::network::{sign_transaction, unsigned_transaction, Member, Network};
use bmac_core::policy::PolicyExpr;
use bmac_core::{Block, Certificate, Transaction, TxStatus, Version};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ConfigError, NetworkConfig, Profile, WorkloadSettings};

/// A block and the flags the generator expects a correct validator to set.
#[derive(Debug, Clone)]
pub struct GeneratedBlock {
    pub block: Block,
    pub expected: Vec<TxStatus>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Injection {
    None,
    BadSignature,
    PolicyFailure,
    Conflict,
}

struct TxBody {
    function: &'static str,
    /// Accounts or assets the transaction touches.
    touched: Vec<usize>,
    args: Vec<String>,
    reads: Vec<Vec<u8>>,
    writes: Vec<(Vec<u8>, Vec<u8>)>,
}

pub struct Workload {
    settings: WorkloadSettings,
    net: Network,
    rng: ChaCha8Rng,
    clients: Vec<Member>,
    honest: Vec<Member>,
    /// Largest prefix of the honest endorsers that misses the policy.
    short: Vec<Member>,
    committed: HashMap<Vec<u8>, Version>,
    next_number: u64,
    prev_hash: [u8; 32],
    remaining: usize,
    nonce: u64,
    truth: TruthTable,
}

/// Starts a stream over `cfg.workload`, seeded independently of the keys.
pub fn generate_workload(cfg: &NetworkConfig, seed: u64) -> Result<Workload, ConfigError> {
    cfg.validate()?;
    let net = cfg.network()?;
    let policies = cfg.policies(&net)?;
    let settings = cfg.workload.clone();
    let policy = policies.expr(settings.cc_id).expect("validated").clone();
    let orgs = cfg.endorsing_orgs();
    let honest: Vec<Member> = orgs[..settings.ends_per_tx]
        .iter()
        .map(|o| net.peer(o).expect("endorsing org has a peer").clone())
        .collect();
    let short = (0..honest.len())
        .rev()
        .map(|k| honest[..k].to_vec())
        .find(|set| !satisfies(&policy, set))
        .expect("the empty set never satisfies a policy");
    let clients: Vec<Member> = net.clients().into_iter().cloned().collect();
    if clients.is_empty() {
        return Err(ConfigError::Invalid("the workload needs at least one client".into()));
    }
    Ok(Workload {
        remaining: settings.total_txs,
        settings,
        rng: ChaCha8Rng::seed_from_u64(seed),
        clients,
        honest,
        short,
        committed: HashMap::new(),
        next_number: 1,
        prev_hash: [0; 32],
        nonce: 0,
        truth: TruthTable::new(),
        net,
    })
}

fn satisfies(policy: &PolicyExpr, endorsers: &[Member]) -> bool {
    policy.eval(&|p| endorsers.iter().any(|m| m.org == p.org && m.role == p.role))
}

fn checking(a: usize) -> Vec<u8> {
    format!("checking_{a:06}").into_bytes()
}

fn savings(a: usize) -> Vec<u8> {
    format!("savings_{a:06}").into_bytes()
}

fn asset(a: usize) -> Vec<u8> {
    format!("asset_{a:06}").into_bytes()
}

impl Workload {
    pub fn network(&self) -> &Network {
        &self.net
    }

    /// Every honest signature produced so far, for table-driven synthetic
    /// engines.
    pub fn truth(&self) -> &TruthTable {
        &self.truth
    }

    pub fn into_truth(self) -> TruthTable {
        self.truth
    }

    /// Generates up to `limit` blocks.
    pub fn take_blocks(&mut self, limit: usize) -> Vec<GeneratedBlock> {
        self.by_ref().take(limit).collect()
    }

    fn pick_injection(&mut self) -> Injection {
        let s = &self.settings;
        let x: f64 = self.rng.gen();
        if x < s.invalid_sig_rate {
            Injection::BadSignature
        } else if x < s.invalid_sig_rate + s.policy_fail_rate {
            Injection::PolicyFailure
        } else if x < s.invalid_sig_rate + s.policy_fail_rate + s.conflict_rate {
            Injection::Conflict
        } else {
            Injection::None
        }
    }

    fn amount(&mut self) -> String {
        self.rng.gen_range(1..=500u32).to_string()
    }

    fn balance(&mut self) -> Vec<u8> {
        self.rng.gen_range(0..1_000_000u32).to_string().into_bytes()
    }

    /// Picks `n` distinct indices below `len`, avoiding `busy` ones while
    /// free indices are easy to find.
    fn distinct(&mut self, len: usize, n: usize, busy: &HashSet<usize>) -> Vec<usize> {
        let mut picked: Vec<usize> = Vec::with_capacity(n);
        while picked.len() < n {
            let mut i = self.rng.gen_range(0..len);
            for _ in 0..64 {
                if !busy.contains(&i) && !picked.contains(&i) {
                    break;
                }
                i = self.rng.gen_range(0..len);
            }
            if picked.contains(&i) {
                i = (0..len).find(|j| !picked.contains(j)).expect("n <= len");
            }
            picked.push(i);
        }
        picked
    }

    fn smallbank(&mut self, busy: &HashSet<usize>) -> TxBody {
        let accounts = self.settings.accounts;
        if self.settings.split_rate > 0.0 && self.rng.gen_bool(self.settings.split_rate) {
            let n = self.settings.split_n;
            let who = self.distinct(accounts, n.max(1), busy);
            let mut args: Vec<String> = who.iter().map(|a| format!("{a:06}")).collect();
            args.push(self.amount());
            let writes = who.iter().map(|&a| (checking(a), self.balance())).collect();
            return TxBody {
                function: "split_payment",
                touched: who.clone(),
                args,
                reads: vec![checking(who[0])],
                writes,
            };
        }
        let op = self.rng.gen_range(0..5);
        let amount = self.amount();
        match op {
            0 => {
                let a = self.distinct(accounts, 1, busy)[0];
                TxBody {
                    function: "transact_savings",
                    touched: vec![a],
                    args: vec![format!("{a:06}"), amount],
                    reads: vec![savings(a)],
                    writes: vec![(savings(a), self.balance())],
                }
            }
            1 => {
                let a = self.distinct(accounts, 1, busy)[0];
                TxBody {
                    function: "deposit_checking",
                    touched: vec![a],
                    args: vec![format!("{a:06}"), amount],
                    reads: vec![checking(a)],
                    writes: vec![(checking(a), self.balance())],
                }
            }
            2 => {
                let ab = self.distinct(accounts, 2, busy);
                TxBody {
                    function: "send_payment",
                    touched: ab.clone(),
                    args: vec![format!("{:06}", ab[0]), format!("{:06}", ab[1]), amount],
                    reads: vec![checking(ab[0]), checking(ab[1])],
                    writes: vec![(checking(ab[0]), self.balance()), (checking(ab[1]), self.balance())],
                }
            }
            3 => {
                let a = self.distinct(accounts, 1, busy)[0];
                TxBody {
                    function: "write_check",
                    touched: vec![a],
                    args: vec![format!("{a:06}"), amount],
                    reads: vec![checking(a), savings(a)],
                    writes: vec![(checking(a), self.balance())],
                }
            }
            _ => {
                let ab = self.distinct(accounts, 2, busy);
                TxBody {
                    function: "amalgamate",
                    touched: ab.clone(),
                    args: vec![format!("{:06}", ab[0]), format!("{:06}", ab[1])],
                    reads: vec![savings(ab[0]), checking(ab[1])],
                    writes: vec![(savings(ab[0]), b"0".to_vec()), (checking(ab[1]), self.balance())],
                }
            }
        }
    }

    fn drm(&mut self, busy: &HashSet<usize>) -> TxBody {
        let s = &self.settings;
        let (assets, reads, writes) = (s.assets, s.drm_reads, s.drm_writes);
        let picked = self.distinct(assets, reads.max(writes), busy);
        let args = picked.iter().map(|a| format!("{a:06}")).collect();
        let writes = picked[..writes]
            .iter()
            .map(|&a| {
                let plays: u32 = self.rng.gen_range(0..100_000);
                let value = format!("{{\"plays\":{plays},\"owner\":\"artist_{:04}\"}}", a % 1000);
                (asset(a), value.into_bytes())
            })
            .collect();
        TxBody {
            function: "play",
            touched: picked.clone(),
            args,
            reads: picked[..reads].iter().map(|&a| asset(a)).collect(),
            writes,
        }
    }

    fn build_tx(
        &mut self,
        number: u64,
        tx_num: u32,
        body: TxBody,
        reads: Vec<ReadItem>,
        injection: Injection,
    ) -> Transaction {
        let client = self.clients[self.rng.gen_range(0..self.clients.len())].clone();
        self.nonce += 1;
        let mut nonce = self.rng.gen::<[u8; 24]>().to_vec();
        nonce.extend_from_slice(&self.nonce.to_be_bytes());
        let mut tx = unsigned_transaction(self.settings.cc_id, &client, reads, Vec::new(), nonce);
        tx.header.timestamp_nanos = 1_700_000_000_000_000_000 + number * 1_000_000_000 + tx_num as u64 * 1000;
        tx.proposal.chaincode = match self.settings.profile {
            Profile::Smallbank => "smallbank".into(),
            Profile::Drm => "drm".into(),
        };
        tx.proposal.args = std::iter::once(body.function.as_bytes().to_vec())
            .chain(body.args.into_iter().map(String::into_bytes))
            .collect();
        let summary: Vec<String> = body
            .writes
            .iter()
            .map(|(k, v)| format!("\"{}\":\"{}\"", String::from_utf8_lossy(k), String::from_utf8_lossy(v)))
            .collect();
        tx.payload.response = Response {
            status: 200,
            message: "OK".into(),
            body: format!("{{{}}}", summary.join(",")).into_bytes(),
        };
        tx.payload.writes = body
            .writes
            .into_iter()
            .map(|(key, value)| WriteItem { key, value })
            .collect();
        let endorsers: Vec<&Member> = match injection {
            Injection::PolicyFailure => self.short.iter().collect(),
            _ => self.honest.iter().collect(),
        };
        let mut tx = sign_transaction(tx, &client, &endorsers).expect("generated keys sign");
        for e in &tx.endorsements {
            let key = Certificate::public_key_of(&e.endorser).ok();
            let digest = endorsement_digest(&tx, &e.endorser);
            self.truth.insert_request(&VerifyRequest::from_der(&e.signature, key, digest));
        }
        if injection == Injection::BadSignature {
            let last = tx.client_signature.len() - 1;
            tx.client_signature[last] ^= 0x01;
        } else {
            let key = Certificate::public_key_of(&tx.creator).ok();
            self.truth
                .insert_request(&VerifyRequest::from_der(&tx.client_signature, key, tx_digest(&tx)));
        }
        tx
    }

    fn next_block(&mut self, size: usize) -> GeneratedBlock {
        let number = self.next_number;
        let mut current = self.committed.clone();
        let mut written_here: Vec<Vec<u8>> = Vec::new();
        let mut busy: HashSet<usize> = HashSet::new();
        let mut txs = Vec::with_capacity(size);
        let mut expected = Vec::with_capacity(size);

        for tx_num in 0..size as u32 {
            let injection = self.pick_injection();
            let body = match self.settings.profile {
                Profile::Smallbank => self.smallbank(&busy),
                Profile::Drm => self.drm(&busy),
            };
            let committed = |k: &[u8]| self.committed.get(k).copied().unwrap_or(Version::ABSENT);
            let mut reads: Vec<ReadItem> = body
                .reads
                .iter()
                .map(|k| ReadItem {
                    key: k.clone(),
                    version: committed(k),
                })
                .collect();
            if injection == Injection::Conflict {
                // Read a key an earlier transaction of this block writes, at
                // its pre-block version; without one, claim a version that
                // cannot exist yet.
                let stale = if written_here.is_empty() {
                    ReadItem {
                        key: body.reads.first().cloned().unwrap_or_else(|| body.writes[0].0.clone()),
                        version: Version::new(number, tx_num),
                    }
                } else {
                    let k = written_here[self.rng.gen_range(0..written_here.len())].clone();
                    let version = committed(&k);
                    ReadItem { key: k, version }
                };
                reads.retain(|r| r.key != stale.key);
                reads.push(stale);
            }
            let now = |k: &[u8]| current.get(k).copied().unwrap_or(Version::ABSENT);
            let status = match injection {
                Injection::BadSignature => TxStatus::InvalidSig,
                Injection::PolicyFailure => TxStatus::InvalidPolicy,
                _ if reads.iter().any(|r| now(&r.key) != r.version) => TxStatus::InvalidMvcc,
                _ => TxStatus::Valid,
            };
            busy.extend(body.touched.iter().copied());
            let tx = self.build_tx(number, tx_num, body, reads, injection);
            if status == TxStatus::Valid {
                for w in &tx.payload.writes {
                    current.insert(w.key.clone(), Version::new(number, tx_num));
                    written_here.push(w.key.clone());
                }
            }
            txs.push(tx);
            expected.push(status);
        }

        let block = self
            .net
            .block(number, self.prev_hash, txs)
            .expect("generated blocks fit the block limit");
        let orderer_key = Certificate::public_key_of(&block.metadata.orderer).ok();
        self.truth
            .insert_request(&VerifyRequest::from_der(&block.metadata.signature, orderer_key, block.digest()));
        self.prev_hash = sha256(&encode_header_section(&block.header));
        self.committed = current;
        self.next_number += 1;
        GeneratedBlock { block, expected }
    }
}

impl Iterator for Workload {
    type Item = GeneratedBlock;

    fn next(&mut self) -> Option<GeneratedBlock> {
        if self.remaining == 0 {
            return None;
        }
        let size = self.remaining.min(self.settings.block_size);
        self.remaining -= size;
        Some(self.next_block(size))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use bmac_core::block::encode_baseline;
    use bmac_core::oracle::validate_block_reference;
    use bmac_core::statedb::Snapshot;

    fn cfg(edit: impl FnOnce(&mut NetworkConfig)) -> NetworkConfig {
        let mut c = NetworkConfig::with_orgs(3, &[(1, "2-outof-3 orgs")]);
        c.workload.total_txs = 120;
        c.workload.block_size = 40;
        c.workload.accounts = 200;
        edit(&mut c);
        c
    }

    fn oracle_flags(c: &NetworkConfig, blocks: &[GeneratedBlock]) -> Vec<Vec<TxStatus>> {
        let net = c.network().unwrap();
        let policies = c.policies(&net).unwrap();
        let mut state = Snapshot::new();
        blocks
            .iter()
            .map(|b| validate_block_reference(&b.block, &mut state, &policies, c.pipeline.store_capacity).flags)
            .collect()
    }

    #[test]
    fn same_seed_same_bytes() {
        let c = cfg(|_| {});
        let a: Vec<Vec<u8>> = generate_workload(&c, 3).unwrap().map(|b| encode_baseline(&b.block)).collect();
        let b: Vec<Vec<u8>> = generate_workload(&c, 3).unwrap().map(|b| encode_baseline(&b.block)).collect();
        let other: Vec<Vec<u8>> = generate_workload(&c, 4).unwrap().map(|b| encode_baseline(&b.block)).collect();
        assert_eq!(a.len(), 3);
        assert_eq!(a, b);
        assert_ne!(a, other);
    }

    #[test]
    fn honest_stream_is_all_valid() {
        let c = cfg(|_| {});
        let blocks: Vec<_> = generate_workload(&c, 1).unwrap().collect();
        for (b, flags) in blocks.iter().zip(oracle_flags(&c, &blocks)) {
            assert!(flags.iter().all(|f| f.is_valid()), "block {}: {flags:?}", b.block.number());
            assert_eq!(flags, b.expected);
        }
        let txs: Vec<&Transaction> = blocks.iter().flat_map(|b| &b.block.transactions).collect();
        assert_eq!(txs.len(), 120);
        assert!(txs.iter().all(|t| (1..=2).contains(&t.payload.reads.len())));
        assert!(txs.iter().all(|t| (1..=2).contains(&t.payload.writes.len())));
        assert!(txs.iter().all(|t| t.endorsements.len() == 2));
    }

    #[test]
    fn injected_faults_match_the_oracle() {
        let c = cfg(|c| {
            c.workload.invalid_sig_rate = 0.1;
            c.workload.policy_fail_rate = 0.1;
            c.workload.conflict_rate = 0.1;
            c.workload.total_txs = 400;
            c.workload.block_size = 100;
        });
        let blocks: Vec<_> = generate_workload(&c, 9).unwrap().collect();
        let oracle = oracle_flags(&c, &blocks);
        let mut seen = HashSet::new();
        for (b, flags) in blocks.iter().zip(oracle) {
            assert_eq!(flags, b.expected, "block {}", b.block.number());
            seen.extend(flags);
        }
        for s in [TxStatus::Valid, TxStatus::InvalidSig, TxStatus::InvalidPolicy, TxStatus::InvalidMvcc] {
            assert!(seen.contains(&s), "{s:?} never produced");
        }
    }

    #[test]
    fn split_payments_write_n_accounts() {
        let c = cfg(|c| {
            c.workload.split_rate = 1.0;
            c.workload.split_n = 4;
        });
        let blocks: Vec<_> = generate_workload(&c, 2).unwrap().collect();
        for tx in blocks.iter().flat_map(|b| &b.block.transactions) {
            assert_eq!(tx.payload.writes.len(), 4);
            assert_eq!(tx.proposal.args[0], b"split_payment");
        }
        let flags = oracle_flags(&c, &blocks);
        assert!(flags.iter().flatten().all(|f| f.is_valid()));
    }

    #[test]
    fn drm_defaults_to_one_read_one_write() {
        let c = cfg(|c| c.workload.profile = Profile::Drm);
        let blocks: Vec<_> = generate_workload(&c, 2).unwrap().collect();
        for tx in blocks.iter().flat_map(|b| &b.block.transactions) {
            assert_eq!(tx.payload.reads.len(), 1);
            assert_eq!(tx.payload.writes.len(), 1);
        }
        assert!(oracle_flags(&c, &blocks).iter().flatten().all(|f| f.is_valid()));
    }

    #[test]
    fn keyspace_beyond_capacity_is_rejected() {
        let c = cfg(|c| c.pipeline.store_capacity = 100);
        assert!(generate_workload(&c, 1).is_err());
    }

    #[test]
    fn truth_table_covers_honest_signatures_only() {
        let c = cfg(|c| c.workload.invalid_sig_rate = 0.5);
        let mut w = generate_workload(&c, 5).unwrap();
        let blocks: Vec<_> = w.by_ref().collect();
        let truth = w.into_truth();
        for b in &blocks {
            for (tx, flag) in b.block.transactions.iter().zip(&b.expected) {
                let key = Certificate::public_key_of(&tx.creator).ok();
                let req = VerifyRequest::from_der(&tx.client_signature, key, tx_digest(tx));
                assert_eq!(truth.lookup(&req), *flag != TxStatus::InvalidSig);
            }
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(12))]

        #[test]
        fn predictions_match_the_oracle(
            seed in 0u64..1000,
            drm in proptest::bool::ANY,
            block_size in 1usize..30,
            split_rate in 0.0f64..1.0,
            split_n in 1usize..6,
            bad_sig in 0.0f64..0.3,
            unsat in 0.0f64..0.3,
            conflict in 0.0f64..0.3,
        ) {
            let c = cfg(|c| {
                c.workload.total_txs = 45;
                c.workload.block_size = block_size;
                c.workload.profile = if drm { Profile::Drm } else { Profile::Smallbank };
                c.workload.drm_reads = 2;
                c.workload.drm_writes = 2;
                c.workload.split_rate = split_rate;
                c.workload.split_n = split_n;
                c.workload.invalid_sig_rate = bad_sig;
                c.workload.policy_fail_rate = unsat;
                c.workload.conflict_rate = conflict;
            });
            let blocks: Vec<_> = generate_workload(&c, seed).unwrap().collect();
            proptest::prop_assert_eq!(blocks.iter().map(|b| b.block.transactions.len()).sum::<usize>(), 45);
            let expected: Vec<Vec<TxStatus>> = blocks.iter().map(|b| b.expected.clone()).collect();
            proptest::prop_assert_eq!(oracle_flags(&c, &blocks), expected);
        }
    }
}
