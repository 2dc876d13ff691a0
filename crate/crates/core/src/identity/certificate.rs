use sha2::{Digest, Sha256};

use super::{IdentityError, PublicKey, Role, PUBLIC_KEY_LEN};

/// Serialized size of a certificate record unless configured otherwise.
pub const DEFAULT_CERT_SIZE: usize = 860;

/// Self-describing identity record standing in for an X.509 certificate.
///
/// Byte layout (big-endian lengths):
///
/// ```text
/// u16 name_len | name | u8 role | u8 seq | u16 key_len | key | u16 pad_len | pad
/// ```
///
/// The padding brings the record to its configured serialized size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certificate {
    pub org_name: String,
    pub role: Role,
    pub seq: u8,
    pub public_key: PublicKey,
    pub padding: Vec<u8>,
}

impl Certificate {
    /// Builds a certificate padded to exactly `size` serialized bytes.
    pub fn new(
        org_name: impl Into<String>,
        role: Role,
        seq: u8,
        public_key: PublicKey,
        size: usize,
    ) -> Result<Self, IdentityError> {
        let org_name = org_name.into();
        if org_name.len() > u16::MAX as usize {
            return Err(IdentityError::Certificate("org name too long".into()));
        }
        if seq > 0xF {
            return Err(IdentityError::Range {
                field: "node sequence",
                value: seq as u32,
                max: 0xF,
            });
        }
        let fixed = Self::fixed_len(&org_name);
        if size < fixed || size - fixed > u16::MAX as usize {
            return Err(IdentityError::Certificate(format!(
                "size {size} cannot hold a record with {fixed} fixed bytes"
            )));
        }
        let mut cert = Certificate {
            org_name,
            role,
            seq,
            public_key,
            padding: Vec::new(),
        };
        cert.padding = filler(&cert.header_bytes(), size - fixed);
        Ok(cert)
    }

    fn fixed_len(org_name: &str) -> usize {
        2 + org_name.len() + 1 + 1 + 2 + PUBLIC_KEY_LEN + 2
    }

    fn header_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::fixed_len(&self.org_name));
        out.extend_from_slice(&(self.org_name.len() as u16).to_be_bytes());
        out.extend_from_slice(self.org_name.as_bytes());
        out.push(self.role.code());
        out.push(self.seq);
        out.extend_from_slice(&(PUBLIC_KEY_LEN as u16).to_be_bytes());
        out.extend_from_slice(self.public_key.as_bytes());
        out
    }

    pub fn serialized_len(&self) -> usize {
        Self::fixed_len(&self.org_name) + self.padding.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.header_bytes();
        out.extend_from_slice(&(self.padding.len() as u16).to_be_bytes());
        out.extend_from_slice(&self.padding);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IdentityError> {
        let mut r = Cursor { bytes, pos: 0 };
        let name_len = r.u16()? as usize;
        let org_name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| IdentityError::Certificate("org name is not utf-8".into()))?;
        let role = Role::from_code(r.u8()?)
            .ok_or_else(|| IdentityError::Certificate("undefined role code".into()))?;
        let seq = r.u8()?;
        if seq > 0xF {
            return Err(IdentityError::Certificate(format!("node sequence {seq} > 15")));
        }
        let key_len = r.u16()? as usize;
        let public_key = PublicKey::from_sec1(r.take(key_len)?)
            .map_err(|e| IdentityError::Certificate(e.to_string()))?;
        let pad_len = r.u16()? as usize;
        let padding = r.take(pad_len)?.to_vec();
        if r.pos != bytes.len() {
            return Err(IdentityError::Certificate(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Certificate {
            org_name,
            role,
            seq,
            public_key,
            padding,
        })
    }

    /// Reads only the public key field of a serialized record.
    pub fn public_key_of(bytes: &[u8]) -> Result<PublicKey, IdentityError> {
        let mut r = Cursor { bytes, pos: 0 };
        let name_len = r.u16()? as usize;
        r.take(name_len + 2)?;
        let key_len = r.u16()? as usize;
        PublicKey::from_sec1(r.take(key_len)?).map_err(|e| IdentityError::Certificate(e.to_string()))
    }
}

// Incompressible, deterministic filler so that padded records of distinct
// identities never share long runs of bytes.
fn filler(seed: &[u8], len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(len + 32);
    let mut block: [u8; 32] = Sha256::digest(seed).into();
    while out.len() < len {
        out.extend_from_slice(&block);
        block = Sha256::digest(block).into();
    }
    out.truncate(len);
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IdentityError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            IdentityError::Certificate(format!("truncated at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, IdentityError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, IdentityError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::SigningKey;

    fn key() -> PublicKey {
        *SigningKey::derive(b"cert-test").public_key()
    }

    #[test]
    fn default_size_is_exact() {
        let cert = Certificate::new("Org1", Role::Peer, 0, key(), DEFAULT_CERT_SIZE).unwrap();
        assert_eq!(cert.to_bytes().len(), DEFAULT_CERT_SIZE);
        assert_eq!(cert.serialized_len(), DEFAULT_CERT_SIZE);
    }

    #[test]
    fn round_trip_and_key_access() {
        let cert = Certificate::new("OrdererOrg", Role::Orderer, 3, key(), 500).unwrap();
        let bytes = cert.to_bytes();
        assert_eq!(Certificate::from_bytes(&bytes).unwrap(), cert);
        assert_eq!(Certificate::public_key_of(&bytes).unwrap(), cert.public_key);
    }

    #[test]
    fn rejects_truncation_and_small_sizes() {
        let bytes = Certificate::new("Org1", Role::Peer, 0, key(), 200).unwrap().to_bytes();
        assert!(Certificate::from_bytes(&bytes[..150]).is_err());
        assert!(Certificate::new("Org1", Role::Peer, 0, key(), 40).is_err());
        assert!(Certificate::new("Org1", Role::Peer, 16, key(), 200).is_err());
    }

    #[test]
    fn distinct_identities_have_distinct_padding() {
        let a = Certificate::new("Org1", Role::Peer, 0, key(), 860).unwrap();
        let b = Certificate::new("Org1", Role::Peer, 1, key(), 860).unwrap();
        assert_ne!(a.padding, b.padding);
    }
}
