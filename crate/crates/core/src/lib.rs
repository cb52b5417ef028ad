//! Public-key protection for the data and code carried by mobile agents.
//!
//! - [`crypto`]: signature, hybrid public-key encryption, digest, certificates.
//! - [`agent`]: the agent object, code signing and the append-only data area.
//! - [`protection`]: plain, basic-encrypted, CRC-bound signed, CRC-bound
//!   encrypted and partially encrypted messages.
//! - [`registry`]: route servers holding signed freshness-field records.
//! - [`sim`]: a deterministic multi-host simulator with an attack catalog and
//!   an auditor.

#![forbid(unsafe_code)]

pub mod agent;
pub mod crypto;
pub mod encoding;
pub mod protection;
pub mod registry;
pub mod sim;
pub mod verdict;

pub use agent::{Agent, AgentId, AgentServer, CodeArea, DataEntry, Route};
pub use crypto::{CertDirectory, Certificate, Digest, HostId, KeyPair, PublicKey, TrustAnchor};
pub use encoding::Canonical;
pub use protection::{CrcBlock, FreshnessField, ProtectedEntry, ProtectionMode, Provider};
pub use registry::{FieldRecord, RecordSource, RegistryState};
pub use verdict::{FailReason, Verdict};
