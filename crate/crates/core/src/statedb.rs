//! In-memory versioned key-value store.
//!
//! Many readers, one writer. Each key has its own lock; a write holds it for
//! its whole duration, so a reader of that key waits and then observes the
//! new value.

use std::collections::{BTreeMap, HashMap};
use std::io::{self, Write};
use std::path::Path;
use std::sync::Arc;

use parking_lot::lock_api::ArcRwLockWriteGuard;
use parking_lot::{RawRwLock, RwLock};
use thiserror::Error;

use crate::block::Version;

pub const DEFAULT_STORE_CAPACITY: usize = 8192;

type Slot = Arc<RwLock<Option<(Vec<u8>, Version)>>>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("store full: {capacity} keys")]
pub struct CapacityError {
    pub capacity: usize,
}

pub type Snapshot = BTreeMap<Vec<u8>, (Vec<u8>, Version)>;

pub struct KvStore {
    slots: RwLock<HashMap<Vec<u8>, Slot>>,
    capacity: usize,
}

impl Default for KvStore {
    fn default() -> Self {
        Self::new(DEFAULT_STORE_CAPACITY)
    }
}

/// An in-flight write; the key is unreadable until the guard is committed or
/// dropped.
pub struct WriteGuard {
    guard: ArcRwLockWriteGuard<RawRwLock, Option<(Vec<u8>, Version)>>,
}

impl WriteGuard {
    pub fn commit(mut self, value: Vec<u8>, version: Version) {
        *self.guard = Some((value, version));
    }
}

impl KvStore {
    pub fn new(capacity: usize) -> Self {
        KvStore {
            slots: RwLock::new(HashMap::new()),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.slots.read().values().filter(|s| s.read().is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &[u8]) -> Option<(Vec<u8>, Version)> {
        let slot = self.slots.read().get(key).cloned()?;
        let v = slot.read().clone();
        v
    }

    /// Version of `key`, `Version::ABSENT` if the key does not exist.
    pub fn version_of(&self, key: &[u8]) -> Version {
        let Some(slot) = self.slots.read().get(key).cloned() else {
            return Version::ABSENT;
        };
        let v = slot.read().as_ref().map_or(Version::ABSENT, |(_, v)| *v);
        v
    }

    /// Locks `key` for writing, creating it if needed.
    pub fn begin_write(&self, key: &[u8]) -> Result<WriteGuard, CapacityError> {
        let existing = self.slots.read().get(key).cloned();
        let slot = match existing {
            Some(s) => s,
            None => {
                let mut slots = self.slots.write();
                let len = slots.len();
                match slots.get(key) {
                    Some(s) => s.clone(),
                    None if len >= self.capacity => return Err(CapacityError { capacity: self.capacity }),
                    None => slots.entry(key.to_vec()).or_default().clone(),
                }
            }
        };
        Ok(WriteGuard {
            guard: slot.write_arc(),
        })
    }

    /// True if inserting every key in `keys` would exceed the capacity.
    pub fn would_overflow<'a>(&self, keys: impl IntoIterator<Item = &'a [u8]>) -> bool {
        let slots = self.slots.read();
        let mut fresh: Vec<&[u8]> = Vec::new();
        for k in keys {
            if !slots.contains_key(k) && !fresh.contains(&k) {
                fresh.push(k);
            }
        }
        slots.len() + fresh.len() > self.capacity
    }

    pub fn put(&self, key: &[u8], value: Vec<u8>, version: Version) -> Result<(), CapacityError> {
        self.begin_write(key)?.commit(value, version);
        Ok(())
    }

    /// Point-in-time copy of every committed key.
    pub fn snapshot(&self) -> Snapshot {
        self.slots
            .read()
            .iter()
            .filter_map(|(k, s)| s.read().clone().map(|v| (k.clone(), v)))
            .collect()
    }

    /// Loads a snapshot into an empty store.
    pub fn from_snapshot(snapshot: &Snapshot, capacity: usize) -> Result<Self, CapacityError> {
        let store = KvStore::new(capacity);
        for (k, (v, ver)) in snapshot {
            store.put(k, v.clone(), *ver)?;
        }
        Ok(store)
    }

    /// Writes `hex(key) hex(value) block:tx` lines in key order.
    pub fn dump(&self, path: &Path) -> io::Result<()> {
        let mut out = io::BufWriter::new(std::fs::File::create(path)?);
        for (k, (v, ver)) in self.snapshot() {
            writeln!(out, "{} {} {}:{}", hex::encode(k), hex::encode(v), ver.block_num, ver.tx_num)?;
        }
        out.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::mpsc;
    use std::time::Duration;

    #[test]
    fn basic_get_put() {
        let s = KvStore::default();
        assert_eq!(s.get(b"k"), None);
        assert_eq!(s.version_of(b"k"), Version::ABSENT);
        s.put(b"k", b"v1".to_vec(), Version::new(1, 0)).unwrap();
        s.put(b"k", b"v2".to_vec(), Version::new(2, 3)).unwrap();
        assert_eq!(s.get(b"k"), Some((b"v2".to_vec(), Version::new(2, 3))));
        // Versions are opaque: going backwards is the caller's business.
        s.put(b"k", b"v0".to_vec(), Version::new(1, 0)).unwrap();
        assert_eq!(s.version_of(b"k"), Version::new(1, 0));
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn capacity_is_enforced() {
        let s = KvStore::default();
        for i in 0..DEFAULT_STORE_CAPACITY as u32 {
            s.put(&i.to_be_bytes(), vec![], Version::new(1, i)).unwrap();
        }
        assert_eq!(
            s.put(b"one more", vec![], Version::new(2, 0)),
            Err(CapacityError { capacity: 8192 })
        );
        // Overwrites still fit.
        s.put(&0u32.to_be_bytes(), vec![1], Version::new(2, 0)).unwrap();
    }

    #[test]
    fn reader_waits_for_in_flight_write() {
        let s = Arc::new(KvStore::default());
        s.put(b"k", b"old".to_vec(), Version::new(1, 0)).unwrap();
        let guard = s.begin_write(b"k").unwrap();
        let (tx, rx) = mpsc::channel();
        let reader = {
            let s = s.clone();
            std::thread::spawn(move || {
                tx.send(()).unwrap();
                s.get(b"k")
            })
        };
        rx.recv().unwrap();
        std::thread::sleep(Duration::from_millis(30));
        assert!(!reader.is_finished());
        // Other keys stay readable meanwhile.
        assert_eq!(s.get(b"other"), None);
        guard.commit(b"new".to_vec(), Version::new(2, 0));
        assert_eq!(reader.join().unwrap(), Some((b"new".to_vec(), Version::new(2, 0))));
    }

    #[test]
    fn snapshot_and_dump() {
        let s = KvStore::default();
        s.put(b"b", b"2".to_vec(), Version::new(3, 1)).unwrap();
        s.put(b"a", b"1".to_vec(), Version::new(2, 0)).unwrap();
        let snap = s.snapshot();
        assert_eq!(snap.keys().cloned().collect::<Vec<_>>(), vec![b"a".to_vec(), b"b".to_vec()]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.txt");
        s.dump(&path).unwrap();
        assert_eq!(std::fs::read_to_string(path).unwrap(), "61 31 2:0\n62 32 3:1\n");
        let copy = KvStore::from_snapshot(&snap, 10).unwrap();
        assert_eq!(copy.snapshot(), snap);
    }
}
