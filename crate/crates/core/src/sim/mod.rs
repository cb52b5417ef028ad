//! Deterministic multi-host simulation: honest and malicious hosts, route
//! servers, and an audit of whatever the server gets back.

mod audit;
pub mod catalog;
mod config;
mod keys;
mod runner;
mod transcript;

use thiserror::Error;

use crate::agent::AgentError;
use crate::crypto::{CryptoError, HostId};
use crate::registry::RegistryError;

pub use audit::{attribute, final_audit, Anomaly, AuditReport, EntryAudit, ProviderCount, Subject};
pub use config::{AttackKind, HostConfig, OutputConfig, ScenarioConfig};
pub use keys::{CertBundle, ScenarioKeys};
pub use runner::{
    run_scenario, AttackRecord, CloneObservation, HopCheck, KillEvidence, RegistryRejection,
    ScenarioOutcome, ScenarioReport,
};
pub use transcript::{Event, Phase, Transcript, TranscriptHeader};

/// Problems found before any event is produced.
#[derive(Debug, Error)]
pub enum SetupError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("no behaviour configured for route host {0}")]
    MissingBehavior(HostId),
    #[error("no key pair for {0}")]
    MissingKey(HostId),
    #[error("no certificate for {0}")]
    MissingCert(HostId),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
}
