//! Node identities: roles, 16-bit encoded ids, certificate records and the
//! certificate/id cache shared by the protocol sender and receiver.
//!
//! An encoded id packs `(org index, role, node sequence)` into 16 bits:
//!
//! ```text
//!  15            8 7      4 3      0
//! +---------------+--------+--------+
//! |   org index   |  role  |  seq   |
//! +---------------+--------+--------+
//! ```

mod cache;
mod certificate;
mod der;
mod ecdsa;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::IdentityCache;
pub use certificate::{Certificate, DEFAULT_CERT_SIZE};
pub use der::{der_decode_signature, der_encode_signature, DerError, DerErrorKind};
pub use ecdsa::{sign, verify, verify_parts, PublicKey, SignatureError, SigningKey, PUBLIC_KEY_LEN};

/// The four predefined node roles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Orderer = 0,
    Admin = 1,
    Peer = 2,
    Client = 3,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Orderer, Role::Admin, Role::Peer, Role::Client];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Role> {
        Role::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Orderer => "Orderer",
            Role::Admin => "Admin",
            Role::Peer => "Peer",
            Role::Client => "Client",
        })
    }
}

impl FromStr for Role {
    type Err = IdentityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "orderer" => Ok(Role::Orderer),
            "admin" => Ok(Role::Admin),
            "peer" => Ok(Role::Peer),
            "client" => Ok(Role::Client),
            _ => Err(IdentityError::UnknownRole(s.to_string())),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IdentityError {
    #[error("{field} {value} out of range (max {max})")]
    Range {
        field: &'static str,
        value: u32,
        max: u32,
    },
    #[error("unknown role {0:?}")]
    UnknownRole(String),
    #[error("encoded id {0} has an undefined role nibble")]
    BadRoleNibble(EncodedId),
    #[error("malformed certificate: {0}")]
    Certificate(String),
    #[error("id {id} already bound to a different certificate")]
    Collision { id: EncodedId },
    #[error("certificate already bound to id {existing}, not {requested}")]
    Rebind {
        existing: EncodedId,
        requested: EncodedId,
    },
    #[error("too many organizations (limit 256)")]
    TooManyOrgs,
}

/// 16-bit identity encoding: org in bits 15..8, role in 7..4, seq in 3..0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EncodedId(u16);

impl EncodedId {
    pub const fn from_raw(raw: u16) -> Self {
        EncodedId(raw)
    }

    pub const fn raw(self) -> u16 {
        self.0
    }

    pub fn org(self) -> u8 {
        (self.0 >> 8) as u8
    }

    pub fn role_code(self) -> u8 {
        ((self.0 >> 4) & 0xF) as u8
    }

    pub fn seq(self) -> u8 {
        (self.0 & 0xF) as u8
    }

    /// Splits the id back into its fields; fails only if the role nibble
    /// does not name one of the four roles.
    pub fn decode(self) -> Result<(u8, Role, u8), IdentityError> {
        let role = Role::from_code(self.role_code()).ok_or(IdentityError::BadRoleNibble(self))?;
        Ok((self.org(), role, self.seq()))
    }
}

impl fmt::Display for EncodedId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#06x}", self.0)
    }
}

pub fn encode_id(org_index: u32, role: Role, seq: u32) -> Result<EncodedId, IdentityError> {
    if org_index > 0xFF {
        return Err(IdentityError::Range {
            field: "org index",
            value: org_index,
            max: 0xFF,
        });
    }
    if seq > 0xF {
        return Err(IdentityError::Range {
            field: "node sequence",
            value: seq,
            max: 0xF,
        });
    }
    Ok(EncodedId(
        ((org_index as u16) << 8) | ((role.code() as u16) << 4) | seq as u16,
    ))
}
