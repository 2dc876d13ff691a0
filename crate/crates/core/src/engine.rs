//! Signature verification engines.
//!
//! A call to [`SignatureEngine::verify_batch`] models one round on a set of
//! engine instances working side by side: the whole batch completes together.
//! The synthetic engine therefore charges its fixed latency once per batch.

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};

use crate::fifo::VerifyRequest;
use crate::identity::{verify_parts, PublicKey};

pub trait SignatureEngine: Send + Sync {
    fn verify_batch(&self, requests: &[&VerifyRequest]) -> Vec<bool>;

    fn verify(&self, request: &VerifyRequest) -> bool {
        self.verify_batch(&[request])[0]
    }
}

fn verify_one(req: &VerifyRequest) -> bool {
    match req {
        VerifyRequest::Ready {
            r,
            s,
            public_key,
            digest,
        } => verify_parts(r, s, public_key, digest),
        VerifyRequest::PreFailed => false,
    }
}

/// Real ECDSA P-256 verification, one request after another.
#[derive(Debug, Default, Clone, Copy)]
pub struct EcdsaEngine;

impl SignatureEngine for EcdsaEngine {
    fn verify_batch(&self, requests: &[&VerifyRequest]) -> Vec<bool> {
        requests.iter().map(|r| verify_one(r)).collect()
    }
}

/// Remembers the answers of an inner engine. Lets several pipeline
/// configurations replay one block stream without repeating the curve
/// arithmetic.
pub struct MemoEngine {
    inner: Arc<dyn SignatureEngine>,
    seen: parking_lot::Mutex<HashMap<[u8; 32], bool>>,
    calls: AtomicU64,
}

impl MemoEngine {
    pub fn new(inner: Arc<dyn SignatureEngine>) -> Self {
        MemoEngine {
            inner,
            seen: Default::default(),
            calls: AtomicU64::new(0),
        }
    }

    /// Requests forwarded to the inner engine.
    pub fn misses(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

impl SignatureEngine for MemoEngine {
    fn verify_batch(&self, requests: &[&VerifyRequest]) -> Vec<bool> {
        let keys: Vec<Option<[u8; 32]>> = requests
            .iter()
            .map(|r| match r {
                VerifyRequest::Ready {
                    r,
                    s,
                    public_key,
                    digest,
                } => Some(fingerprint(r, s, public_key, digest)),
                VerifyRequest::PreFailed => None,
            })
            .collect();
        let known: Vec<Option<bool>> = {
            let seen = self.seen.lock();
            keys.iter().map(|k| k.map_or(Some(false), |k| seen.get(&k).copied())).collect()
        };
        let todo: Vec<&VerifyRequest> = requests
            .iter()
            .zip(&known)
            .filter(|(_, k)| k.is_none())
            .map(|(r, _)| *r)
            .collect();
        if todo.is_empty() {
            return known.into_iter().map(Option::unwrap).collect();
        }
        self.calls.fetch_add(todo.len() as u64, Ordering::Relaxed);
        let mut fresh = self.inner.verify_batch(&todo).into_iter();
        let mut seen = self.seen.lock();
        known
            .into_iter()
            .zip(keys)
            .map(|(k, key)| {
                k.unwrap_or_else(|| {
                    let v = fresh.next().expect("one answer per request");
                    seen.insert(key.expect("pre-failed requests are known"), v);
                    v
                })
            })
            .collect()
    }
}

/// Fingerprint of a verification request, used to remember which requests
/// carry honest signatures.
pub fn fingerprint(r: &[u8; 32], s: &[u8; 32], public_key: &PublicKey, digest: &[u8; 32]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(r);
    h.update(s);
    h.update(public_key.as_bytes());
    h.update(digest);
    h.finalize().into()
}

/// Requests known to verify, recorded by whoever produced the signatures.
#[derive(Debug, Default, Clone)]
pub struct TruthTable {
    valid: HashSet<[u8; 32]>,
}

impl TruthTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, r: &[u8; 32], s: &[u8; 32], public_key: &PublicKey, digest: &[u8; 32]) {
        self.valid.insert(fingerprint(r, s, public_key, digest));
    }

    pub fn insert_request(&mut self, req: &VerifyRequest) {
        if let VerifyRequest::Ready {
            r,
            s,
            public_key,
            digest,
        } = req
        {
            self.insert(r, s, public_key, digest);
        }
    }

    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }

    pub fn lookup(&self, req: &VerifyRequest) -> bool {
        match req {
            VerifyRequest::Ready {
                r,
                s,
                public_key,
                digest,
            } => self.valid.contains(&fingerprint(r, s, public_key, digest)),
            VerifyRequest::PreFailed => false,
        }
    }
}

/// Where a synthetic engine takes its answers from.
#[derive(Debug, Clone)]
pub enum Truth {
    /// Look the request up in a table of honest signatures.
    Table(std::sync::Arc<TruthTable>),
    /// Verify for real, then wait out the rest of the latency.
    Crypto,
}

/// Fixed-latency engine for scaling experiments.
#[derive(Debug)]
pub struct SyntheticEngine {
    delay: Duration,
    truth: Truth,
    rounds: AtomicU64,
}

impl SyntheticEngine {
    pub fn new(delay: Duration, truth: Truth) -> Self {
        SyntheticEngine {
            delay,
            truth,
            rounds: AtomicU64::new(0),
        }
    }

    pub fn delay(&self) -> Duration {
        self.delay
    }

    /// Batches served so far.
    pub fn rounds(&self) -> u64 {
        self.rounds.load(Ordering::Relaxed)
    }
}

impl SignatureEngine for SyntheticEngine {
    fn verify_batch(&self, requests: &[&VerifyRequest]) -> Vec<bool> {
        let start = Instant::now();
        let out = match &self.truth {
            Truth::Table(t) => requests.iter().map(|r| t.lookup(r)).collect(),
            Truth::Crypto => requests.iter().map(|r| verify_one(r)).collect(),
        };
        self.rounds.fetch_add(1, Ordering::Relaxed);
        if let Some(rest) = self.delay.checked_sub(start.elapsed()) {
            tighten_timer_slack();
            std::thread::sleep(rest);
        }
        out
    }
}

/// The default 50 us timer slack would add most of itself to every round.
#[cfg(target_os = "linux")]
fn tighten_timer_slack() {
    thread_local!(static DONE: std::cell::Cell<bool> = const { std::cell::Cell::new(false) });
    DONE.with(|done| {
        if !done.replace(true) {
            // SAFETY: PR_SET_TIMERSLACK only changes the calling thread's
            // timer slack and takes no pointers.
            unsafe {
                libc::prctl(libc::PR_SET_TIMERSLACK, 1 as libc::c_ulong, 0, 0, 0);
            }
        }
    });
}

#[cfg(not(target_os = "linux"))]
fn tighten_timer_slack() {}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::{der_decode_signature, SigningKey};

    fn request(key: &SigningKey, digest: [u8; 32]) -> VerifyRequest {
        let (r, s) = der_decode_signature(&key.sign_digest(&digest).unwrap()).unwrap();
        VerifyRequest::Ready {
            r,
            s,
            public_key: *key.public_key(),
            digest,
        }
    }

    #[test]
    fn ecdsa_engine_checks_signatures() {
        let key = SigningKey::derive(b"engine");
        let good = request(&key, [1; 32]);
        let mut bad = good.clone();
        if let VerifyRequest::Ready { digest, .. } = &mut bad {
            digest[0] ^= 1;
        }
        assert_eq!(
            EcdsaEngine.verify_batch(&[&good, &bad, &VerifyRequest::PreFailed]),
            vec![true, false, false]
        );
    }

    #[test]
    fn memo_engine_forwards_each_request_once() {
        let key = SigningKey::derive(b"engine");
        let good = request(&key, [4; 32]);
        let bad = request(&key, [5; 32]);
        let mut bad_digest = bad.clone();
        if let VerifyRequest::Ready { digest, .. } = &mut bad_digest {
            digest[0] ^= 1;
        }
        let memo = MemoEngine::new(Arc::new(EcdsaEngine));
        let pre = VerifyRequest::PreFailed;
        assert_eq!(memo.verify_batch(&[&good, &bad_digest, &pre]), vec![true, false, false]);
        assert_eq!(memo.verify_batch(&[&bad, &good, &bad_digest]), vec![true, true, false]);
        assert_eq!(memo.misses(), 3);
    }

    #[test]
    fn synthetic_engine_charges_once_per_batch() {
        let key = SigningKey::derive(b"engine");
        let good = request(&key, [2; 32]);
        let mut table = TruthTable::new();
        table.insert_request(&good);
        let other = request(&key, [3; 32]);
        let engine = SyntheticEngine::new(Duration::from_millis(5), Truth::Table(table.into()));
        let start = Instant::now();
        assert_eq!(engine.verify_batch(&[&good, &other, &good]), vec![true, false, true]);
        let took = start.elapsed();
        assert!(took >= Duration::from_millis(5) && took < Duration::from_millis(200), "{took:?}");
        assert_eq!(engine.rounds(), 1);
    }
}
