//! Sequential reference validator.
//!
//! Validates a decoded block one step at a time: orderer signature, then per
//! transaction the client signature, every endorsement, a full left-to-right
//! policy evaluation, the version check and the writes. It shares no code
//! with the receiver or the pipeline beyond the block model and ECDSA.

use std::collections::HashSet;

use crate::block::{data_hash, encode_tx_section, endorsement_digest, tx_digest, Block, Version};
use crate::identity::{verify, Certificate, PublicKey, Role};
use crate::policy::{PolicyExpr, PolicySet};
use crate::results::{TxStatus, VerificationCounts};
use crate::statedb::Snapshot;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleOutcome {
    pub block_num: u64,
    pub block_valid: bool,
    pub flags: Vec<TxStatus>,
    pub verifications: VerificationCounts,
    /// Set when the store ran out of room; later transactions are skipped.
    pub error: Option<String>,
}

/// Counts every signature check, including ones that fail before reaching
/// the curve arithmetic (bad DER, unreadable key).
struct Checker {
    counts: VerificationCounts,
}

impl Checker {
    fn check(&self, sig: &[u8], cert: &[u8], digest: &[u8; 32]) -> bool {
        let Ok(key) = Certificate::public_key_of(cert) else {
            return false;
        };
        checked(sig, &key, digest)
    }
}

fn checked(sig: &[u8], key: &PublicKey, digest: &[u8; 32]) -> bool {
    verify(sig, key, digest).unwrap_or(false)
}

/// Evaluates every sub-expression, left to right, without short-circuiting.
fn eval_full(expr: &PolicyExpr, held: &HashSet<(String, Role)>) -> bool {
    match expr {
        PolicyExpr::Principal(p) => held.contains(&(p.org.clone(), p.role)),
        PolicyExpr::And(xs) => xs.iter().map(|x| eval_full(x, held)).fold(true, |a, b| a & b),
        PolicyExpr::Or(xs) => xs.iter().map(|x| eval_full(x, held)).fold(false, |a, b| a | b),
        PolicyExpr::NOutOf(n, xs) => xs.iter().map(|x| eval_full(x, held) as usize).sum::<usize>() >= *n,
    }
}

fn block_signature_valid(block: &Block, checker: &mut Checker) -> bool {
    checker.counts.block += 1;
    let sections: Vec<Vec<u8>> = block.transactions.iter().map(encode_tx_section).collect();
    let hash_ok = data_hash(sections.iter().map(Vec::as_slice)) == block.header.data_hash;
    let sig_ok = checker.check(&block.metadata.signature, &block.metadata.orderer, &block.digest());
    hash_ok && sig_ok
}

/// Validates `block` against `state`, applying the writes of valid
/// transactions. `capacity` bounds the number of distinct keys.
pub fn validate_block_reference(
    block: &Block,
    state: &mut Snapshot,
    policies: &PolicySet,
    capacity: usize,
) -> OracleOutcome {
    let mut checker = Checker {
        counts: VerificationCounts::default(),
    };
    let block_num = block.number();
    let block_valid = block_signature_valid(block, &mut checker);
    let mut flags = Vec::with_capacity(block.transactions.len());
    let mut error = None;

    for (tx_num, tx) in block.transactions.iter().enumerate() {
        if !block_valid || error.is_some() {
            flags.push(TxStatus::SkippedBlockInvalid);
            continue;
        }
        checker.counts.tx += 1;
        if !checker.check(&tx.client_signature, &tx.creator, &tx_digest(tx)) {
            flags.push(TxStatus::InvalidSig);
            continue;
        }

        let mut held = HashSet::new();
        for e in &tx.endorsements {
            checker.counts.endorsement += 1;
            if checker.check(&e.signature, &e.endorser, &endorsement_digest(tx, &e.endorser)) {
                if let Ok(cert) = Certificate::from_bytes(&e.endorser) {
                    held.insert((cert.org_name, cert.role));
                }
            }
        }
        let satisfied = policies.expr(tx.cc_id).is_some_and(|p| eval_full(p, &held));
        if !satisfied {
            flags.push(TxStatus::InvalidPolicy);
            continue;
        }

        let current = |key: &[u8]| state.get(key).map_or(Version::ABSENT, |(_, v)| *v);
        if !tx.payload.reads.iter().all(|r| current(&r.key) == r.version) {
            flags.push(TxStatus::InvalidMvcc);
            continue;
        }
        let fresh: HashSet<&[u8]> = tx
            .payload
            .writes
            .iter()
            .map(|w| w.key.as_slice())
            .filter(|k| !state.contains_key(*k))
            .collect();
        if state.len() + fresh.len() > capacity {
            error = Some(format!("state store full ({capacity} keys)"));
            flags.push(TxStatus::SkippedBlockInvalid);
            continue;
        }
        let version = Version::new(block_num, tx_num as u32);
        for w in &tx.payload.writes {
            state.insert(w.key.clone(), (w.value.clone(), version));
        }
        flags.push(TxStatus::Valid);
    }

    OracleOutcome {
        block_num,
        block_valid,
        flags,
        verifications: checker.counts,
        error,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::{ReadItem, WriteItem};
    use crate::network::Network;
    use crate::statedb::DEFAULT_STORE_CAPACITY;

    fn setup() -> (Network, PolicySet) {
        let net = Network::standard(7, 3, 1, 1);
        let policies = net
            .policy_set([(1, "2-outof-3 orgs"), (2, "Org1 & Org2 & Org3"), (3, "Org1")])
            .unwrap();
        (net, policies)
    }

    fn tx(net: &Network, cc_id: u16, endorsers: &[&str], reads: Vec<ReadItem>, writes: Vec<WriteItem>) -> crate::Transaction {
        net.transaction(cc_id, 0, endorsers, reads, writes, b"n".to_vec()).unwrap()
    }

    fn w(k: &str, v: &str) -> WriteItem {
        WriteItem {
            key: k.into(),
            value: v.into(),
        }
    }

    #[test]
    fn honest_block_is_fully_valid() {
        let (net, policies) = setup();
        let txs = vec![
            tx(&net, 1, &["Org1", "Org2", "Org3"], vec![], vec![w("a", "1")]),
            tx(&net, 2, &["Org1", "Org2", "Org3"], vec![], vec![w("b", "2")]),
        ];
        let block = net.block(1, [0; 32], txs).unwrap();
        let mut state = Snapshot::new();
        let out = validate_block_reference(&block, &mut state, &policies, DEFAULT_STORE_CAPACITY);
        assert!(out.block_valid);
        assert_eq!(out.flags, vec![TxStatus::Valid; 2]);
        // Every endorsement is checked regardless of the policy.
        assert_eq!(
            out.verifications,
            VerificationCounts {
                block: 1,
                tx: 2,
                endorsement: 6
            }
        );
        assert_eq!(state[b"a".as_slice()], (b"1".to_vec(), Version::new(1, 0)));
        assert_eq!(state[b"b".as_slice()], (b"2".to_vec(), Version::new(1, 1)));
    }

    #[test]
    fn tampered_and_conflicting_transactions() {
        let (net, policies) = setup();
        let mut tampered = tx(&net, 3, &["Org1"], vec![], vec![w("x", "1")]);
        tampered.payload.writes[0].value = b"2".to_vec();
        let short = tx(&net, 2, &["Org1", "Org2"], vec![], vec![]);
        let first = tx(&net, 3, &["Org1"], vec![ReadItem { key: "k".into(), version: Version::ABSENT }], vec![w("k", "1")]);
        let second = tx(&net, 3, &["Org1"], vec![ReadItem { key: "k".into(), version: Version::ABSENT }], vec![w("k", "2")]);
        let unknown_cc = tx(&net, 9, &["Org1"], vec![], vec![]);
        let block = net.block(1, [0; 32], vec![tampered, short, first, second, unknown_cc]).unwrap();
        let mut state = Snapshot::new();
        let out = validate_block_reference(&block, &mut state, &policies, DEFAULT_STORE_CAPACITY);
        assert_eq!(
            out.flags,
            vec![
                TxStatus::InvalidSig,
                TxStatus::InvalidPolicy,
                TxStatus::Valid,
                TxStatus::InvalidMvcc,
                TxStatus::InvalidPolicy
            ]
        );
        // No endorsement checks for the bad client signature.
        assert_eq!(out.verifications.endorsement, 2 + 1 + 1 + 1);
        assert_eq!(state.len(), 1);
    }

    #[test]
    fn bad_orderer_signature_skips_everything() {
        let (net, policies) = setup();
        let mut block = net
            .block(1, [0; 32], vec![tx(&net, 3, &["Org1"], vec![], vec![w("a", "1")])])
            .unwrap();
        block.metadata.signature[10] ^= 1;
        let mut state = Snapshot::new();
        let out = validate_block_reference(&block, &mut state, &policies, DEFAULT_STORE_CAPACITY);
        assert!(!out.block_valid);
        assert_eq!(out.flags, vec![TxStatus::SkippedBlockInvalid]);
        assert_eq!(out.verifications.total(), 1);
        assert!(state.is_empty());
    }

    #[test]
    fn capacity_stops_the_block() {
        let (net, policies) = setup();
        let txs = vec![
            tx(&net, 3, &["Org1"], vec![], vec![w("a", "1")]),
            tx(&net, 3, &["Org1"], vec![], vec![w("b", "1"), w("c", "1")]),
            tx(&net, 3, &["Org1"], vec![], vec![w("a", "2")]),
        ];
        let block = net.block(1, [0; 32], txs).unwrap();
        let mut state = Snapshot::new();
        let out = validate_block_reference(&block, &mut state, &policies, 2);
        assert_eq!(out.flags[0], TxStatus::Valid);
        assert_eq!(&out.flags[1..], &[TxStatus::SkippedBlockInvalid; 2]);
        assert!(out.error.is_some());
    }

    #[test]
    fn empty_write_sets_leave_state_alone() {
        let (net, policies) = setup();
        let block = net.block(1, [0; 32], vec![tx(&net, 3, &["Org1"], vec![], vec![])]).unwrap();
        let mut state = Snapshot::new();
        state.insert(b"z".to_vec(), (b"0".to_vec(), Version::new(0, 1)));
        let before = state.clone();
        let out = validate_block_reference(&block, &mut state, &policies, DEFAULT_STORE_CAPACITY);
        assert_eq!(out.flags, vec![TxStatus::Valid]);
        assert_eq!(state, before);
    }

    #[test]
    fn full_evaluation_matches_short_circuit_semantics() {
        let expr = crate::policy::parse_policy("(Org1 & Org2) | (Org1 & Org4) | (Org2 & Org3)").unwrap();
        for mask in 0u8..16 {
            let held: HashSet<(String, Role)> = (0..4)
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| (format!("Org{}", i + 1), Role::Peer))
                .collect();
            let direct = expr.eval(&|p| held.contains(&(p.org.clone(), p.role)));
            assert_eq!(eval_full(&expr, &held), direct, "mask {mask:04b}");
        }
    }
}
