//! Field tags of the baseline encoding. See `docs/wire.md`.

pub const HEADER: u8 = 0x01;
pub const TXS: u8 = 0x02;
pub const METADATA: u8 = 0x03;

pub const NUMBER: u8 = 0x10;
pub const PREV_HASH: u8 = 0x11;
pub const DATA_HASH: u8 = 0x12;

pub const TX: u8 = 0x20;
pub const CREATOR: u8 = 0x21;
pub const CHANNEL_HEADER: u8 = 0x22;
pub const CC_ID: u8 = 0x23;
pub const PROPOSAL: u8 = 0x24;
pub const PAYLOAD: u8 = 0x25;
pub const ENDORSEMENTS: u8 = 0x26;
pub const ENDORSEMENT: u8 = 0x27;
pub const ENDORSER: u8 = 0x28;
pub const ENDORSER_SIG: u8 = 0x29;
pub const CLIENT_SIG: u8 = 0x2A;

pub const ORDERER_CERT: u8 = 0x30;
pub const ORDERER_SIG: u8 = 0x31;

pub const CHANNEL_ID: u8 = 0x40;
pub const TX_ID: u8 = 0x41;
pub const TIMESTAMP: u8 = 0x42;
pub const EPOCH: u8 = 0x43;

pub const CC_NAME: u8 = 0x50;
pub const CC_VERSION: u8 = 0x51;
pub const ARG: u8 = 0x52;

pub const PROPOSAL_HASH: u8 = 0x60;
pub const READ_SET: u8 = 0x61;
pub const READ: u8 = 0x62;
pub const KEY: u8 = 0x64;
pub const VERSION: u8 = 0x65;
pub const WRITE_SET: u8 = 0x66;
pub const WRITE: u8 = 0x67;
pub const VALUE: u8 = 0x68;
pub const RESPONSE: u8 = 0x69;
pub const STATUS: u8 = 0x6A;
pub const MESSAGE: u8 = 0x6B;
pub const BODY: u8 = 0x6C;
pub const NONCE: u8 = 0x6D;
