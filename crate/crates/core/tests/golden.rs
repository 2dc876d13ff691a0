//! Golden encoded blocks. Keys derive from the network seed and signatures
//! are deterministic, so the wire bytes of a fixed block stream never change
//! unless the encoding does.
//!
//! `tests/golden/*.wire` holds each block's datagrams in send order, each
//! prefixed by its length as u16 big-endian. `*.baseline` is the plain
//! block encoding. `SHA256SUMS` was written by `sha256sum`, not by this
//! crate. Run with `BLESS_GOLDEN=1` to rewrite the corpus after an
//! intentional format change, then regenerate the sums.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use bmac_core::block::{decode_baseline, encode_baseline, encode_header_section, sha256, ReadItem, WriteItem};
use bmac_core::identity::IdentityCache;
use bmac_core::receiver::{reference_entries, NoopSink, ReceiverConfig, ReceiverCore};
use bmac_core::sender::{Sender, SenderConfig};
use bmac_core::{Block, Network, Version};

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn corpus() -> (Network, Vec<Block>) {
    let net = Network::standard(2024, 3, 1, 1);
    let kv = |k: &str, v: &str| WriteItem {
        key: k.as_bytes().to_vec(),
        value: v.as_bytes().to_vec(),
    };
    let rd = |k: &str, block: u64, tx: u32| ReadItem {
        key: k.as_bytes().to_vec(),
        version: if block == 0 { Version::ABSENT } else { Version::new(block, tx) },
    };
    let b1 = vec![
        net.transaction(1, 0, &["Org1", "Org2"], vec![rd("alice", 0, 0)], vec![kv("alice", "100")], b"n1".to_vec())
            .unwrap(),
        net.transaction(1, 1, &["Org2", "Org3"], vec![], vec![kv("bob", "50"), kv("carol", "7")], b"n2".to_vec())
            .unwrap(),
    ];
    let b2 = vec![
        net.transaction(2, 2, &["Org1", "Org2", "Org3"], vec![rd("alice", 1, 0), rd("bob", 1, 1)], vec![kv("alice", "90"), kv("bob", "60")], b"n3".to_vec())
            .unwrap(),
        net.transaction(1, 0, &["Org3"], vec![rd("carol", 1, 1)], vec![], b"n4".to_vec()).unwrap(),
        net.transaction(1, 1, &[], vec![], vec![kv("dave", "1")], b"n5".to_vec()).unwrap(),
    ];
    let b3 = vec![net
        .transaction(2, 0, &["Org1", "Org3"], vec![rd("dave", 0, 0)], vec![kv("erin", "")], b"n6".to_vec())
        .unwrap()];
    let mut prev = [0u8; 32];
    let blocks = [b1, b2, b3]
        .into_iter()
        .zip(1u64..)
        .map(|(txs, n)| {
            let b = net.block(n, prev, txs).unwrap();
            prev = sha256(&encode_header_section(&b.header));
            b
        })
        .collect();
    (net, blocks)
}

fn frame(datagrams: &[&Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::new();
    for d in datagrams {
        out.extend_from_slice(&(d.len() as u16).to_be_bytes());
        out.extend_from_slice(d);
    }
    out
}

fn unframe(mut bytes: &[u8]) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    while !bytes.is_empty() {
        let n = u16::from_be_bytes([bytes[0], bytes[1]]) as usize;
        out.push(bytes[2..2 + n].to_vec());
        bytes = &bytes[2 + n..];
    }
    out
}

/// File name and contents for every corpus file, freshly encoded.
fn encode_corpus() -> Vec<(String, Vec<u8>)> {
    let (net, blocks) = corpus();
    let sender = Sender::new(Arc::new(IdentityCache::with_orgs(net.orgs().iter().cloned())), SenderConfig::default());
    let mut files = Vec::new();
    for b in &blocks {
        let enc = sender.encode_block(b).unwrap();
        let datagrams: Vec<&Vec<u8>> = enc.datagrams().collect();
        files.push((format!("block_{}.wire", b.number()), frame(&datagrams)));
        files.push((format!("block_{}.baseline", b.number()), encode_baseline(b)));
    }
    files
}

fn sums() -> Vec<(String, String)> {
    let text = std::fs::read_to_string(golden_dir().join("SHA256SUMS")).expect("SHA256SUMS present");
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (hash, name) = l.split_once("  ").expect("sha256sum format");
            (name.to_string(), hash.to_string())
        })
        .collect()
}

#[test]
fn encoder_reproduces_golden_bytes() {
    let files = encode_corpus();
    if std::env::var_os("BLESS_GOLDEN").is_some() {
        std::fs::create_dir_all(golden_dir()).unwrap();
        for (name, bytes) in &files {
            std::fs::write(golden_dir().join(name), bytes).unwrap();
        }
    }
    for (name, bytes) in &files {
        let stored = std::fs::read(golden_dir().join(name)).unwrap_or_else(|_| panic!("missing {name}"));
        assert!(stored == *bytes, "{name} differs from the current encoder");
    }
}

#[test]
fn golden_files_match_recorded_digests() {
    let sums = sums();
    assert_eq!(sums.len(), 6);
    for (name, hash) in sums {
        let bytes = std::fs::read(golden_dir().join(&name)).unwrap();
        assert_eq!(hex::encode(sha256(&bytes)), hash, "{name}");
    }
}

#[test]
fn golden_datagrams_have_the_documented_layout() {
    let (_, blocks) = corpus();
    for b in &blocks {
        let bytes = std::fs::read(golden_dir().join(format!("block_{}.wire", b.number()))).unwrap();
        let datagrams = unframe(&bytes);
        let sections: Vec<&Vec<u8>> = datagrams.iter().filter(|d| d[3] != 3).collect();
        assert_eq!(sections.len(), b.transactions.len() + 2);
        for (i, d) in sections.iter().enumerate() {
            assert_eq!(&d[0..2], &[0xB1, 0x0C]);
            assert_eq!(d[2], 1);
            let expected_type = if i == 0 { 0 } else if i + 1 == sections.len() { 2 } else { 1 };
            assert_eq!(d[3], expected_type);
            assert_eq!(u64::from_be_bytes(d[4..12].try_into().unwrap()), b.number());
            assert_eq!(u16::from_be_bytes([d[12], d[13]]) as usize, i);
            assert_eq!(u16::from_be_bytes([d[14], d[15]]) as usize, sections.len());
            let annotations = u16::from_be_bytes([d[16], d[17]]) as usize;
            let payload = u16::from_be_bytes([d[18], d[19]]) as usize;
            // Walk the annotations by their kind byte to find where the
            // payload starts.
            let mut at = 20;
            for _ in 0..annotations {
                at += match d[at] {
                    0 => 6,
                    1 => 5,
                    k => panic!("annotation kind {k}"),
                };
            }
            assert_eq!(d.len(), at + payload);
        }
    }
}

#[test]
fn golden_stream_decodes_to_the_source_blocks() {
    let (net, blocks) = corpus();
    let config = ReceiverConfig::default();
    let mut core = ReceiverCore::new(
        Arc::new(IdentityCache::with_orgs(net.orgs().iter().cloned())),
        config,
        Arc::new(NoopSink),
    );
    let full = net.cache();
    for b in &blocks {
        let n = b.number();
        let baseline = std::fs::read(golden_dir().join(format!("block_{n}.baseline"))).unwrap();
        assert_eq!(&decode_baseline(&baseline).unwrap(), b);
        let wire = std::fs::read(golden_dir().join(format!("block_{n}.wire"))).unwrap();
        assert!(wire.len() < baseline.len() || n == 1, "block {n} not compressed");
        let entries: Vec<_> = unframe(&wire)
            .iter()
            .flat_map(|d| core.on_datagram(config.port, d, Instant::now()))
            .collect();
        assert_eq!(entries, vec![reference_entries(b, &full).unwrap()]);
    }
}
