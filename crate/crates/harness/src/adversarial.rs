//! Randomized adversarial blocks for differential testing against the
//! reference validator.
//!
//! Each transaction draws its chaincode from a fixed policy mix and an
//! endorser set that does or does not satisfy it. Faults are injected at
//! fixed rates, and whole blocks are occasionally broken at the orderer.

use std::collections::HashMap;

use bmac_core::block::{client_sign, encode_header_section, sha256, ReadItem, WriteItem};
use bmac_core::network::{sign_transaction, unsigned_transaction, Member, Network};
use bmac_core::policy::{PolicyExpr, PolicySet};
use bmac_core::{Block, Transaction, TxStatus, Version};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::workload::GeneratedBlock;

/// 1of1, 2of2, 2of3, 3of3, 3of4 and a five-arm disjunction of pairs.
pub const POLICY_MIX: [(u16, &str); 6] = [
    (1, "Org1"),
    (2, "Org1 & Org2"),
    (3, "2-outof-3 orgs"),
    (4, "Org1 & Org2 & Org3"),
    (5, "3-outof-4 orgs"),
    (6, "(Org1 & Org2) | (Org1 & Org4) | (Org2 & Org3) | (Org2 & Org4) | (Org3 & Org4)"),
];

#[derive(Debug, Clone, Copy)]
pub struct AdversarialSettings {
    pub max_block_size: usize,
    pub keyspace: usize,
    pub invalid_sig_rate: f64,
    pub unsat_rate: f64,
    pub conflict_rate: f64,
    /// An honest-looking transaction with one corrupted endorsement.
    pub bad_endorsement_rate: f64,
    /// Blocks whose orderer signature or data hash is broken.
    pub bad_block_rate: f64,
}

impl Default for AdversarialSettings {
    fn default() -> Self {
        AdversarialSettings {
            max_block_size: 256,
            keyspace: 512,
            invalid_sig_rate: 0.10,
            unsat_rate: 0.10,
            conflict_rate: 0.05,
            bad_endorsement_rate: 0.05,
            bad_block_rate: 0.02,
        }
    }
}

pub struct AdversarialStream {
    net: Network,
    policies: PolicySet,
    peers: Vec<Member>,
    clients: Vec<Member>,
    settings: AdversarialSettings,
    rng: ChaCha8Rng,
    committed: HashMap<Vec<u8>, Version>,
    next_number: u64,
    prev_hash: [u8; 32],
}

impl AdversarialStream {
    pub fn new(seed: u64, settings: AdversarialSettings) -> Self {
        let net = Network::standard(seed, 4, 1, 2);
        let policies = net.policy_set(POLICY_MIX).expect("policy mix compiles");
        let peers = (1..=4).map(|i| net.peer(&format!("Org{i}")).unwrap().clone()).collect();
        let clients = net.clients().into_iter().cloned().collect();
        AdversarialStream {
            net,
            policies,
            peers,
            clients,
            settings,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed),
            committed: HashMap::new(),
            next_number: 1,
            prev_hash: [0; 32],
        }
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn policies(&self) -> &PolicySet {
        &self.policies
    }

    fn endorsers(&mut self, policy: &PolicyExpr, want: bool) -> Vec<Member> {
        loop {
            let mut set = self.peers.clone();
            set.shuffle(&mut self.rng);
            set.truncate(self.rng.gen_range(0..=4));
            if satisfied(policy, &set) == want {
                return set;
            }
        }
    }

    fn key(&mut self) -> Vec<u8> {
        format!("key_{:05}", self.rng.gen_range(0..self.settings.keyspace)).into_bytes()
    }

    fn next_block(&mut self, size: usize) -> GeneratedBlock {
        let s = self.settings;
        let number = self.next_number;
        let mut current = self.committed.clone();
        let mut written_here: Vec<Vec<u8>> = Vec::new();
        let mut txs = Vec::with_capacity(size);
        let mut expected = Vec::with_capacity(size);

        for tx_num in 0..size as u32 {
            let (cc_id, _) = POLICY_MIX[self.rng.gen_range(0..POLICY_MIX.len())];
            let policy = self.policies.expr(cc_id).unwrap().clone();
            let x: f64 = self.rng.gen();
            let bad_sig = x < s.invalid_sig_rate;
            let unsat = !bad_sig && x < s.invalid_sig_rate + s.unsat_rate;
            let conflict = !bad_sig && !unsat && x < s.invalid_sig_rate + s.unsat_rate + s.conflict_rate;
            let mut endorsers = self.endorsers(&policy, !unsat);

            let keys: Vec<Vec<u8>> = (0..self.rng.gen_range(0..=2)).map(|_| self.key()).collect();
            let mut reads: Vec<ReadItem> = keys
                .into_iter()
                .map(|k| ReadItem {
                    version: version_in(&self.committed, &k),
                    key: k,
                })
                .collect();
            reads.dedup_by(|a, b| a.key == b.key);
            if conflict {
                let stale = match written_here.choose(&mut self.rng) {
                    Some(k) => ReadItem {
                        key: k.clone(),
                        version: version_in(&self.committed, k),
                    },
                    None => ReadItem {
                        key: self.key(),
                        version: Version::new(number, tx_num),
                    },
                };
                reads.retain(|r| r.key != stale.key);
                reads.push(stale);
            }
            let writes: Vec<WriteItem> = (0..self.rng.gen_range(0..=3))
                .map(|_| WriteItem {
                    key: self.key(),
                    value: self.rng.gen::<[u8; 12]>().to_vec(),
                })
                .collect();

            let client = self.clients[self.rng.gen_range(0..self.clients.len())].clone();
            let nonce = [number.to_be_bytes(), (tx_num as u64).to_be_bytes()].concat();
            let tx = unsigned_transaction(cc_id, &client, reads, writes, nonce);
            let refs: Vec<&Member> = endorsers.iter().collect();
            let mut tx = sign_transaction(tx, &client, &refs).expect("network keys sign");

            if !bad_sig && !tx.endorsements.is_empty() && self.rng.gen_bool(s.bad_endorsement_rate) {
                let i = self.rng.gen_range(0..tx.endorsements.len());
                if self.rng.gen_bool(0.5) {
                    let last = tx.endorsements[i].signature.len() - 1;
                    tx.endorsements[i].signature[last] ^= 1;
                } else {
                    tx.endorsements[i].signature.truncate(7);
                }
                endorsers.remove(i);
                client_sign(&mut tx, &client.key).expect("client key signs");
            }
            if bad_sig {
                if self.rng.gen_bool(0.5) {
                    let last = tx.client_signature.len() - 1;
                    tx.client_signature[last] ^= 1;
                } else {
                    tx.client_signature = vec![0x30, 0x02, 0x02, 0x00];
                }
            }

            let status = if bad_sig {
                TxStatus::InvalidSig
            } else if !satisfied(&policy, &endorsers) {
                TxStatus::InvalidPolicy
            } else if tx.payload.reads.iter().any(|r| version_in(&current, &r.key) != r.version) {
                TxStatus::InvalidMvcc
            } else {
                TxStatus::Valid
            };
            if status == TxStatus::Valid {
                for w in &tx.payload.writes {
                    current.insert(w.key.clone(), Version::new(number, tx_num));
                    written_here.push(w.key.clone());
                }
            }
            txs.push(tx);
            expected.push(status);
        }

        let mut block = self.net.block(number, self.prev_hash, txs).expect("block fits");
        let broken = self.rng.gen_bool(s.bad_block_rate);
        if broken {
            if self.rng.gen_bool(0.5) {
                let last = block.metadata.signature.len() - 1;
                block.metadata.signature[last] ^= 1;
            } else {
                // Signed, then altered in flight: the data hash no longer matches.
                tamper_first_write(&mut block);
            }
            expected = vec![TxStatus::SkippedBlockInvalid; size];
        } else {
            self.committed = current;
        }
        self.prev_hash = sha256(&encode_header_section(&block.header));
        self.next_number += 1;
        GeneratedBlock { block, expected }
    }

    /// Blocks of random size in `1..=max_block_size`.
    pub fn take_blocks(&mut self, count: usize) -> Vec<GeneratedBlock> {
        (0..count)
            .map(|_| {
                let size = self.rng.gen_range(1..=self.settings.max_block_size);
                self.next_block(size)
            })
            .collect()
    }
}

fn version_in(map: &HashMap<Vec<u8>, Version>, key: &[u8]) -> Version {
    map.get(key).copied().unwrap_or(Version::ABSENT)
}

fn satisfied(policy: &PolicyExpr, endorsers: &[Member]) -> bool {
    policy.eval(&|p| endorsers.iter().any(|m| m.org == p.org && m.role == p.role))
}

fn tamper_first_write(block: &mut Block) {
    let tx: &mut Transaction = &mut block.transactions[0];
    match tx.payload.writes.first_mut() {
        Some(w) => w.value.push(0xff),
        None => tx.payload.nonce.push(0xff),
    }
}
