//! Incremental block and data hashing over sections that may arrive out of
//! order. Sections are absorbed as soon as every predecessor has been; later
//! ones wait in a pending map.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

#[derive(Debug, Clone)]
pub struct BlockHasher {
    /// Header followed by transaction sections: the orderer-signed digest.
    block: Sha256,
    /// Transaction sections only: the header's data hash.
    data: Sha256,
    /// Index of the last section that is hashed (the final transaction).
    last: u16,
    next: u16,
    pending: BTreeMap<u16, Vec<u8>>,
}

impl BlockHasher {
    /// `total_sections` counts header, transactions and metadata.
    pub fn new(total_sections: u16) -> Self {
        BlockHasher {
            block: Sha256::new(),
            data: Sha256::new(),
            last: total_sections.saturating_sub(2),
            next: 0,
            pending: BTreeMap::new(),
        }
    }

    /// Feeds section `index`. The metadata section is not hashed and is
    /// ignored.
    pub fn feed(&mut self, index: u16, bytes: &[u8]) {
        if index > self.last || index < self.next {
            return;
        }
        if index != self.next {
            self.pending.entry(index).or_insert_with(|| bytes.to_vec());
            return;
        }
        self.absorb(bytes);
        while let Some(bytes) = self.pending.remove(&self.next) {
            self.absorb(&bytes);
        }
    }

    fn absorb(&mut self, bytes: &[u8]) {
        self.block.update(bytes);
        if self.next > 0 {
            self.data.update(bytes);
        }
        self.next += 1;
    }

    pub fn is_complete(&self) -> bool {
        self.next > self.last
    }

    /// Bytes buffered because an earlier section is still missing.
    pub fn pending_bytes(&self) -> usize {
        self.pending.values().map(Vec::len).sum()
    }

    /// `(block digest, data hash)` once every hashed section was fed.
    pub fn finish(self) -> Option<([u8; 32], [u8; 32])> {
        self.is_complete()
            .then(|| (self.block.finalize().into(), self.data.finalize().into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::{block_digest, data_hash};

    #[test]
    fn any_arrival_order_gives_the_same_digests() {
        let sections: Vec<Vec<u8>> = (0..6u8).map(|i| vec![i; 10 + i as usize]).collect();
        let expected_block = block_digest(&sections[0], sections[1..5].iter().map(Vec::as_slice));
        let expected_data = data_hash(sections[1..5].iter().map(Vec::as_slice));
        for order in [[0, 1, 2, 3, 4, 5], [5, 4, 3, 2, 1, 0], [2, 0, 5, 4, 1, 3]] {
            let mut h = BlockHasher::new(6);
            for i in order {
                h.feed(i as u16, &sections[i]);
            }
            assert_eq!(h.finish(), Some((expected_block, expected_data)));
        }
    }

    #[test]
    fn incomplete_stream_yields_nothing() {
        let mut h = BlockHasher::new(3);
        h.feed(1, b"tx");
        assert_eq!(h.pending_bytes(), 2);
        assert!(h.finish().is_none());
    }
}
