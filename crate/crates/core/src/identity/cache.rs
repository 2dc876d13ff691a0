use std::collections::HashMap;
use std::sync::Arc;

use parking_lot::RwLock;

use super::{encode_id, Certificate, EncodedId, IdentityError};

#[derive(Default)]
struct Inner {
    orgs: Vec<String>,
    by_cert: HashMap<Arc<[u8]>, EncodedId>,
    by_id: HashMap<EncodedId, Arc<[u8]>>,
}

/// Bidirectional certificate/id map. Entries are never evicted.
///
/// Reads take a shared lock; registrations are serialized behind the write
/// lock and visible to every subsequent read.
#[derive(Default)]
pub struct IdentityCache {
    inner: RwLock<Inner>,
}

impl IdentityCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Creates a cache whose org directory assigns index `i` to `orgs[i]`.
    pub fn with_orgs<S: Into<String>>(orgs: impl IntoIterator<Item = S>) -> Self {
        let cache = Self::new();
        cache.inner.write().orgs = orgs.into_iter().map(Into::into).collect();
        cache
    }

    pub fn org_index(&self, name: &str) -> Option<u8> {
        self.inner.read().orgs.iter().position(|o| o == name).map(|i| i as u8)
    }

    pub fn orgs(&self) -> Vec<String> {
        self.inner.read().orgs.clone()
    }

    pub fn len(&self) -> usize {
        self.inner.read().by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn id_of(&self, cert: &[u8]) -> Option<EncodedId> {
        self.inner.read().by_cert.get(cert).copied()
    }

    pub fn cert_of(&self, id: EncodedId) -> Option<Arc<[u8]>> {
        self.inner.read().by_id.get(&id).cloned()
    }

    /// Returns the id of `cert`, inserting it under the id derived from its
    /// `(org, role, seq)` fields when absent. Orgs not yet in the directory
    /// are appended to it.
    pub fn register(&self, cert: &Certificate) -> Result<EncodedId, IdentityError> {
        self.register_bytes(&cert.to_bytes())
    }

    pub fn register_bytes(&self, bytes: &[u8]) -> Result<EncodedId, IdentityError> {
        if let Some(id) = self.id_of(bytes) {
            return Ok(id);
        }
        let cert = Certificate::from_bytes(bytes)?;
        let mut inner = self.inner.write();
        if let Some(&id) = inner.by_cert.get(bytes) {
            return Ok(id);
        }
        let org = match inner.orgs.iter().position(|o| *o == cert.org_name) {
            Some(i) => i,
            None => {
                if inner.orgs.len() >= 0x100 {
                    return Err(IdentityError::TooManyOrgs);
                }
                inner.orgs.push(cert.org_name.clone());
                inner.orgs.len() - 1
            }
        };
        let id = encode_id(org as u32, cert.role, cert.seq as u32)?;
        if inner.by_id.contains_key(&id) {
            return Err(IdentityError::Collision { id });
        }
        let key: Arc<[u8]> = Arc::from(bytes);
        inner.by_cert.insert(key.clone(), id);
        inner.by_id.insert(id, key);
        Ok(id)
    }

    /// Binds `id` to `cert` as announced by a peer. Re-announcing an existing
    /// binding is a no-op; conflicting bindings are rejected.
    pub fn insert(&self, id: EncodedId, cert: &[u8]) -> Result<(), IdentityError> {
        let mut inner = self.inner.write();
        match (inner.by_id.get(&id), inner.by_cert.get(cert)) {
            (Some(existing), _) if existing.as_ref() == cert => Ok(()),
            (Some(_), _) => Err(IdentityError::Collision { id }),
            (None, Some(&existing)) => Err(IdentityError::Rebind {
                existing,
                requested: id,
            }),
            (None, None) => {
                let key: Arc<[u8]> = Arc::from(cert);
                inner.by_cert.insert(key.clone(), id);
                inner.by_id.insert(id, key);
                Ok(())
            }
        }
    }

    /// Checks that the two maps are mutual inverses.
    pub fn is_consistent(&self) -> bool {
        let inner = self.inner.read();
        inner.by_cert.len() == inner.by_id.len()
            && inner
                .by_cert
                .iter()
                .all(|(cert, id)| inner.by_id.get(id).is_some_and(|c| c == cert))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::{Role, SigningKey};

    fn cert(org: &str, role: Role, seq: u8) -> Certificate {
        let key = SigningKey::derive(format!("{org}/{role}/{seq}").as_bytes());
        Certificate::new(org, role, seq, *key.public_key(), 300).unwrap()
    }

    #[test]
    fn register_is_idempotent() {
        let cache = IdentityCache::with_orgs(["Org0", "Org1"]);
        let c = cert("Org1", Role::Peer, 0);
        let a = cache.register(&c).unwrap();
        let b = cache.register(&c).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.raw(), 0x0120);
        assert_eq!(cache.len(), 1);
    }

    #[test]
    fn same_org_different_seq_differs_in_low_nibble() {
        let cache = IdentityCache::with_orgs(["Org1"]);
        let a = cache.register(&cert("Org1", Role::Peer, 0)).unwrap();
        let b = cache.register(&cert("Org1", Role::Peer, 5)).unwrap();
        assert_eq!(a.raw() ^ b.raw(), 5);
    }

    #[test]
    fn collision_is_a_configuration_error() {
        let cache = IdentityCache::with_orgs(["Org1"]);
        cache.register(&cert("Org1", Role::Peer, 0)).unwrap();
        let mut impostor = cert("Org1", Role::Peer, 0);
        impostor.public_key = *SigningKey::derive(b"impostor").public_key();
        assert!(matches!(
            cache.register(&impostor),
            Err(IdentityError::Collision { .. })
        ));
    }

    #[test]
    fn unknown_orgs_are_appended() {
        let cache = IdentityCache::with_orgs(["Org1"]);
        let id = cache.register(&cert("Org9", Role::Admin, 1)).unwrap();
        assert_eq!(id.org(), 1);
        assert_eq!(cache.org_index("Org9"), Some(1));
    }

    #[test]
    fn sync_insert_rules() {
        let sender = IdentityCache::with_orgs(["Org1"]);
        let receiver = IdentityCache::new();
        let c = cert("Org1", Role::Client, 2).to_bytes();
        let id = sender.register_bytes(&c).unwrap();
        receiver.insert(id, &c).unwrap();
        receiver.insert(id, &c).unwrap();
        assert_eq!(receiver.cert_of(id).unwrap().as_ref(), c.as_slice());
        let other = cert("Org1", Role::Client, 3).to_bytes();
        assert!(receiver.insert(id, &other).is_err());
        assert!(receiver.insert(EncodedId::from_raw(0x0999), &c).is_err());
        assert!(receiver.is_consistent());
    }

    #[test]
    fn concurrent_registration_keeps_bijection() {
        let cache = Arc::new(IdentityCache::with_orgs(["Org0", "Org1", "Org2", "Org3"]));
        let certs: Vec<_> = (0..4)
            .flat_map(|o| (0..4).map(move |s| (o, s)))
            .map(|(o, s)| cert(&format!("Org{o}"), Role::Peer, s))
            .collect();
        let certs = Arc::new(certs);
        let handles: Vec<_> = (0..4)
            .map(|_| {
                let cache = cache.clone();
                let certs = certs.clone();
                std::thread::spawn(move || {
                    certs.iter().map(|c| cache.register(c).unwrap()).collect::<Vec<_>>()
                })
            })
            .collect();
        let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        assert!(results.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(cache.len(), 16);
        assert!(cache.is_consistent());
    }
}
