//! Validator peer core: identities, the block model and its baseline codec,
//! the section-per-datagram dissemination protocol (sender and receiver),
//! endorsement policies, the versioned state store, the parallel-pipelined
//! block processor and the sequential reference validator.

pub mod block;
pub mod engine;
pub mod fifo;
pub mod identity;
pub mod network;
pub mod oracle;
pub mod pipeline;
pub mod policy;
pub mod receiver;
pub mod results;
pub mod sender;
pub mod statedb;
pub mod wire;

pub use block::{Block, BlockHeader, BlockMetadata, Endorsement, Transaction, Version};
pub use identity::{Certificate, EncodedId, IdentityCache, PublicKey, Role, SigningKey};
pub use network::Network;
pub use policy::{CompiledPolicy, PolicyExpr, PolicySet, RegisterFile};
pub use results::{ResultMailbox, TxStatus, ValidationResult};
pub use statedb::KvStore;
