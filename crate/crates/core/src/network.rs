//! A seeded test network: orgs, their nodes, keys and certificates.
//!
//! Org index 0 is the ordering organization; application orgs follow, so
//! `Org1` gets index 1 and its first peer encodes as `0x0120`.

use thiserror::Error;

use crate::block::{
    build_signed_block, client_sign, endorse, Block, BlockError, ChannelHeader, Proposal, ReadItem, Transaction,
    TxPayload, WriteItem, DEFAULT_MAX_TXS,
};
use crate::identity::{encode_id, Certificate, EncodedId, IdentityCache, IdentityError, Role, SigningKey, DEFAULT_CERT_SIZE};
use crate::policy::{PolicyError, PolicySet};

pub const ORDERER_ORG: &str = "OrdererOrg";

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error(transparent)]
    Identity(#[from] IdentityError),
    #[error(transparent)]
    Block(#[from] BlockError),
    #[error("no member {0} in the network")]
    UnknownMember(String),
    #[error("member {0} already exists")]
    Duplicate(String),
}

#[derive(Debug, Clone)]
pub struct Member {
    pub org: String,
    pub role: Role,
    pub seq: u8,
    pub id: EncodedId,
    pub key: SigningKey,
    /// Serialized certificate.
    pub cert: Vec<u8>,
}

impl Member {
    pub fn name(&self) -> String {
        format!("{}.{}{}", self.org, self.role, self.seq)
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    seed: u64,
    cert_size: usize,
    orgs: Vec<String>,
    members: Vec<Member>,
}

impl Network {
    /// A network holding only the ordering org and its orderer.
    pub fn new(seed: u64, cert_size: usize) -> Result<Self, NetworkError> {
        let mut net = Network {
            seed,
            cert_size,
            orgs: vec![ORDERER_ORG.to_string()],
            members: Vec::new(),
        };
        net.add_member(ORDERER_ORG, Role::Orderer, 0)?;
        Ok(net)
    }

    /// Orderer plus `Org1..=OrgN`, each with `peers` peers and `clients`
    /// clients, at the default certificate size.
    pub fn standard(seed: u64, num_orgs: usize, peers: u8, clients: u8) -> Self {
        Self::build(seed, num_orgs, peers, clients, DEFAULT_CERT_SIZE).expect("standard network parameters are valid")
    }

    pub fn build(seed: u64, num_orgs: usize, peers: u8, clients: u8, cert_size: usize) -> Result<Self, NetworkError> {
        let mut net = Self::new(seed, cert_size)?;
        for i in 1..=num_orgs {
            let org = format!("Org{i}");
            for seq in 0..peers {
                net.add_member(&org, Role::Peer, seq)?;
            }
            for seq in 0..clients {
                net.add_member(&org, Role::Client, seq)?;
            }
        }
        Ok(net)
    }

    pub fn add_member(&mut self, org: &str, role: Role, seq: u8) -> Result<&Member, NetworkError> {
        if self.member(org, role, seq).is_some() {
            return Err(NetworkError::Duplicate(format!("{org}.{role}{seq}")));
        }
        let index = match self.orgs.iter().position(|o| o == org) {
            Some(i) => i,
            None => {
                self.orgs.push(org.to_string());
                self.orgs.len() - 1
            }
        };
        let id = encode_id(index as u32, role, seq as u32)?;
        let key = SigningKey::derive(format!("{}/{org}/{role}/{seq}", self.seed).as_bytes());
        let cert = Certificate::new(org, role, seq, *key.public_key(), self.cert_size)?.to_bytes();
        self.members.push(Member {
            org: org.to_string(),
            role,
            seq,
            id,
            key,
            cert,
        });
        Ok(self.members.last().unwrap())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn cert_size(&self) -> usize {
        self.cert_size
    }

    /// Org names by index.
    pub fn orgs(&self) -> &[String] {
        &self.orgs
    }

    pub fn members(&self) -> &[Member] {
        &self.members
    }

    pub fn member(&self, org: &str, role: Role, seq: u8) -> Option<&Member> {
        self.members.iter().find(|m| m.org == org && m.role == role && m.seq == seq)
    }

    pub fn orderer(&self) -> &Member {
        self.members.iter().find(|m| m.role == Role::Orderer).expect("orderer exists")
    }

    /// First peer of `org`.
    pub fn peer(&self, org: &str) -> Option<&Member> {
        self.member(org, Role::Peer, 0)
    }

    pub fn clients(&self) -> Vec<&Member> {
        self.members.iter().filter(|m| m.role == Role::Client).collect()
    }

    /// A cache with the org directory and every member registered.
    pub fn cache(&self) -> IdentityCache {
        let cache = IdentityCache::with_orgs(self.orgs.iter().cloned());
        for m in &self.members {
            cache.insert(m.id, &m.cert).expect("network ids are unique");
        }
        cache
    }

    pub fn policy_set<'a>(&self, chaincodes: impl IntoIterator<Item = (u16, &'a str)>) -> Result<PolicySet, PolicyError> {
        PolicySet::compile(chaincodes, &self.orgs)
    }

    /// Builds, endorses and signs a transaction. `client` indexes
    /// [`clients`](Self::clients); `endorsers` name orgs whose first peer
    /// endorses.
    pub fn transaction(
        &self,
        cc_id: u16,
        client: usize,
        endorsers: &[&str],
        reads: Vec<ReadItem>,
        writes: Vec<WriteItem>,
        nonce: Vec<u8>,
    ) -> Result<Transaction, NetworkError> {
        let clients = self.clients();
        let client = *clients
            .get(client)
            .ok_or_else(|| NetworkError::UnknownMember(format!("client #{client}")))?;
        let peers = endorsers
            .iter()
            .map(|o| self.peer(o).ok_or_else(|| NetworkError::UnknownMember(format!("{o}.Peer0"))))
            .collect::<Result<Vec<_>, _>>()?;
        let tx = unsigned_transaction(cc_id, client, reads, writes, nonce);
        sign_transaction(tx, client, &peers)
    }

    pub fn block(&self, number: u64, previous_hash: [u8; 32], txs: Vec<Transaction>) -> Result<Block, NetworkError> {
        let o = self.orderer();
        Ok(build_signed_block(number, previous_hash, txs, &o.cert, &o.key, DEFAULT_MAX_TXS)?)
    }
}

/// A transaction with payload filled in and no signatures.
pub fn unsigned_transaction(
    cc_id: u16,
    client: &Member,
    reads: Vec<ReadItem>,
    writes: Vec<WriteItem>,
    nonce: Vec<u8>,
) -> Transaction {
    let tx_id = hex::encode(crate::block::sha256(&[client.cert.as_slice(), &nonce].concat()));
    Transaction {
        creator: client.cert.clone(),
        header: ChannelHeader {
            channel_id: "bmacchannel".into(),
            tx_id,
            timestamp_nanos: 0,
            epoch: 0,
        },
        cc_id,
        proposal: Proposal {
            chaincode: format!("cc{cc_id}"),
            version: "1.0".into(),
            args: Vec::new(),
        },
        payload: TxPayload {
            proposal_hash: crate::block::sha256(&nonce),
            reads,
            writes,
            response: crate::block::Response {
                status: 200,
                message: String::new(),
                body: Vec::new(),
            },
            nonce,
        },
        endorsements: Vec::new(),
        client_signature: Vec::new(),
    }
}

/// Attaches one endorsement per endorser, then the client signature.
pub fn sign_transaction(mut tx: Transaction, client: &Member, endorsers: &[&Member]) -> Result<Transaction, NetworkError> {
    tx.endorsements = endorsers
        .iter()
        .map(|m| endorse(&tx, &m.cert, &m.key))
        .collect::<Result<_, _>>()?;
    client_sign(&mut tx, &client.key)?;
    Ok(tx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_layout() {
        let net = Network::standard(1, 3, 2, 1);
        assert_eq!(net.orgs(), &["OrdererOrg", "Org1", "Org2", "Org3"]);
        assert_eq!(net.orderer().id.raw(), 0x0000);
        assert_eq!(net.peer("Org1").unwrap().id.raw(), 0x0120);
        assert_eq!(net.member("Org3", Role::Client, 0).unwrap().id.raw(), 0x0330);
        assert_eq!(net.members().len(), 1 + 3 * 3);
        assert!(net.members().iter().all(|m| m.cert.len() == DEFAULT_CERT_SIZE));
        let cache = net.cache();
        assert!(cache.is_consistent());
        assert_eq!(cache.len(), net.members().len());
        assert_eq!(cache.org_index("Org2"), Some(2));
    }

    #[test]
    fn same_seed_same_keys() {
        let a = Network::standard(5, 2, 1, 1);
        let b = Network::standard(5, 2, 1, 1);
        let c = Network::standard(6, 2, 1, 1);
        assert_eq!(a.peer("Org2").unwrap().cert, b.peer("Org2").unwrap().cert);
        assert_ne!(a.peer("Org2").unwrap().cert, c.peer("Org2").unwrap().cert);
    }

    #[test]
    fn duplicate_and_unknown_members() {
        let mut net = Network::standard(1, 1, 1, 1);
        assert!(matches!(net.add_member("Org1", Role::Peer, 0), Err(NetworkError::Duplicate(_))));
        assert!(matches!(
            net.transaction(1, 0, &["Org7"], vec![], vec![], vec![]),
            Err(NetworkError::UnknownMember(_))
        ));
    }
}
