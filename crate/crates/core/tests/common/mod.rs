#![allow(dead_code)]

use bmac_core::block::{ReadItem, WriteItem};
use bmac_core::network::{sign_transaction, unsigned_transaction, Network};
use bmac_core::policy::PolicySet;
use bmac_core::statedb::Snapshot;
use bmac_core::{Block, Transaction, Version};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const POLICIES: [(u16, &str); 6] = [
    (1, "1-outof-1 orgs"),
    (2, "2-outof-2 orgs"),
    (3, "2-outof-3 orgs"),
    (4, "3-outof-3 orgs"),
    (5, "3-outof-4 orgs"),
    (6, "(Org1 & Org2) | (Org1 & Org4) | (Org2 & Org3) | (Org2 & Org4) | (Org3 & Org4)"),
];

pub fn network() -> (Network, PolicySet) {
    let net = Network::standard(42, 4, 1, 2);
    let policies = net.policy_set(POLICIES).unwrap();
    (net, policies)
}

pub fn key(i: u32) -> Vec<u8> {
    format!("k{i:03}").into_bytes()
}

/// A transaction with random endorsers, reads and writes, optionally broken
/// in one of several ways.
pub fn random_tx(net: &Network, rng: &mut ChaCha8Rng, state: &Snapshot, keyspace: u32, nonce: u64) -> Transaction {
    let cc_id = if rng.gen_bool(0.03) { 99 } else { rng.gen_range(1..=6) };
    let mut orgs: Vec<&str> = vec!["Org1", "Org2", "Org3", "Org4"];
    orgs.shuffle(rng);
    let n_ends = rng.gen_range(0..=4);
    let endorsers: Vec<_> = orgs[..n_ends].iter().map(|o| net.peer(o).unwrap()).collect();
    let reads = (0..rng.gen_range(0..3))
        .map(|_| {
            let k = key(rng.gen_range(0..keyspace));
            let current = state.get(&k).map_or(Version::ABSENT, |(_, v)| *v);
            let version = if rng.gen_bool(0.85) { current } else { Version::new(rng.gen_range(0..3), rng.gen_range(0..3)) };
            ReadItem { key: k, version }
        })
        .collect();
    let writes = (0..rng.gen_range(0..4))
        .map(|_| WriteItem {
            key: key(rng.gen_range(0..keyspace)),
            value: rng.gen::<[u8; 8]>().to_vec(),
        })
        .collect();
    let clients = net.clients();
    let client = clients[rng.gen_range(0..clients.len())];
    let tx = unsigned_transaction(cc_id, client, reads, writes, nonce.to_be_bytes().to_vec());
    let mut tx = sign_transaction(tx, client, &endorsers).unwrap();
    match rng.gen_range(0..20) {
        // Valid DER, wrong signature.
        0 => {
            let last = tx.client_signature.len() - 1;
            tx.client_signature[last] ^= 1;
        }
        // Undecodable signature.
        1 => tx.client_signature = vec![0x30, 0x01, 0x00],
        2 if !tx.endorsements.is_empty() => {
            let e = rng.gen_range(0..tx.endorsements.len());
            let last = tx.endorsements[e].signature.len() - 1;
            tx.endorsements[e].signature[last] ^= 1;
            // The client signature covers the endorsements; keep it valid.
            bmac_core::block::client_sign(&mut tx, &client.key).unwrap();
        }
        3 if !tx.endorsements.is_empty() => {
            let e = rng.gen_range(0..tx.endorsements.len());
            tx.endorsements[e].signature.truncate(5);
            bmac_core::block::client_sign(&mut tx, &client.key).unwrap();
        }
        _ => {}
    }
    tx
}

pub fn random_block(
    net: &Network,
    rng: &mut ChaCha8Rng,
    state: &Snapshot,
    number: u64,
    max_txs: usize,
    keyspace: u32,
) -> Block {
    let n = rng.gen_range(1..=max_txs);
    let txs = (0..n)
        .map(|i| random_tx(net, rng, state, keyspace, number << 16 | i as u64))
        .collect();
    let mut block = net.block(number, [0; 32], txs).unwrap();
    if rng.gen_bool(0.05) {
        block.metadata.signature[8] ^= 1;
    }
    block
}
