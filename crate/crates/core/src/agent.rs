//! The mobile agent: a server-signed code area, the server's public key,
//! and an append-only data area of protected entries.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{
    digest, sign, verify, Certificate, CryptoError, Digest, HostId, KeyPair, PrivateKey, PublicKey,
    Signature, TrustAnchor,
};
use crate::encoding::{Canonical, DecodeError, Decoder, Encoder};
use crate::protection::{ProtectedEntry, ProtectionMode};
use crate::verdict::{FailReason, Verdict};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error("agent serial {serial} already used by server {server}")]
    DuplicateId { server: HostId, serial: u64 },
    #[error("entry {got} from {provider} does not follow index {max}")]
    IndexGap {
        provider: HostId,
        max: u64,
        got: u64,
    },
    #[error("route is empty")]
    EmptyRoute,
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// Server identifier plus a per-server serial; unique across the network.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AgentId {
    pub server_id: HostId,
    pub agent_serial: u64,
}

impl AgentId {
    pub fn new(server_id: HostId, agent_serial: u64) -> Self {
        Self {
            server_id,
            agent_serial,
        }
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.server_id, self.agent_serial)
    }
}

impl Canonical for AgentId {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.nested(&self.server_id).u64(self.agent_serial);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            server_id: dec.nested()?,
            agent_serial: dec.u64()?,
        })
    }
}

/// The region the server signs. Route servers are listed here so a host
/// cannot redirect field registrations without invalidating the agent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeArea {
    pub code: Vec<u8>,
    pub id: AgentId,
    pub route_servers: Vec<HostId>,
}

impl CodeArea {
    pub fn sign_with(&self, key: &PrivateKey) -> Result<Signature, CryptoError> {
        sign(key, &self.to_canonical())
    }
}

impl Canonical for CodeArea {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.field(&self.code)
            .nested(&self.id)
            .list(&self.route_servers);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            code: dec.field()?.to_vec(),
            id: dec.nested()?,
            route_servers: dec.list()?,
        })
    }
}

/// One message in the data area. `provider` and `msg_index` travel in the
/// clear so a verifier can pick the right certificate and field record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataEntry {
    pub provider: HostId,
    pub msg_index: u64,
    pub payload: ProtectedEntry,
}

impl DataEntry {
    pub fn mode(&self) -> ProtectionMode {
        self.payload.mode()
    }
}

impl Canonical for DataEntry {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.nested(&self.provider)
            .u64(self.msg_index)
            .nested(&self.payload);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            provider: dec.nested()?,
            msg_index: dec.u64()?,
            payload: dec.nested()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Agent {
    pub code_area: CodeArea,
    pub code_signature: Signature,
    pub server_pub: PublicKey,
    pub data_area: Vec<DataEntry>,
    pub trip: u64,
}

impl Agent {
    pub fn id(&self) -> &AgentId {
        &self.code_area.id
    }

    /// Highest message index appended so far by `provider` (0 if none).
    pub fn max_index(&self, provider: &HostId) -> u64 {
        self.data_area
            .iter()
            .filter(|e| &e.provider == provider)
            .map(|e| e.msg_index)
            .max()
            .unwrap_or(0)
    }

    /// Appends `entry`, which must carry the next index for its provider.
    /// Existing entries are never touched.
    pub fn append_entry(&mut self, entry: DataEntry) -> Result<(), AgentError> {
        let max = self.max_index(&entry.provider);
        if entry.msg_index != max + 1 {
            return Err(AgentError::IndexGap {
                provider: entry.provider,
                max,
                got: entry.msg_index,
            });
        }
        self.data_area.push(entry);
        Ok(())
    }

    pub fn entry(&self, provider: &HostId, index: u64) -> Option<&DataEntry> {
        self.data_area
            .iter()
            .find(|e| &e.provider == provider && e.msg_index == index)
    }

    pub fn digest(&self) -> Digest {
        digest(&self.to_canonical())
    }
}

impl Canonical for Agent {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.nested(&self.code_area)
            .nested(&self.code_signature)
            .nested(&self.server_pub)
            .u64(self.trip)
            .list(&self.data_area);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            code_area: dec.nested()?,
            code_signature: dec.nested()?,
            server_pub: dec.nested()?,
            trip: dec.u64()?,
            data_area: dec.list()?,
        })
    }
}

/// Ordered itinerary for one trip. Revisits are allowed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Route {
    hosts: Vec<HostId>,
    pub trip: u64,
}

impl Route {
    pub fn new(hosts: Vec<HostId>, trip: u64) -> Result<Self, AgentError> {
        if hosts.is_empty() {
            return Err(AgentError::EmptyRoute);
        }
        Ok(Self { hosts, trip })
    }

    pub fn hosts(&self) -> &[HostId] {
        &self.hosts
    }

    pub fn len(&self) -> usize {
        self.hosts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hosts.is_empty()
    }
}

/// An agent server: holds the signing key and hands out strictly
/// increasing serials.
#[derive(Debug, Clone)]
pub struct AgentServer {
    keys: KeyPair,
    last_serial: Option<u64>,
}

impl AgentServer {
    pub fn new(keys: KeyPair) -> Self {
        Self {
            keys,
            last_serial: None,
        }
    }

    pub fn keys(&self) -> &KeyPair {
        &self.keys
    }

    pub fn id(&self) -> &HostId {
        &self.keys.owner
    }

    pub fn mint(
        &mut self,
        code: Vec<u8>,
        serial: u64,
        trip: u64,
        route_servers: Vec<HostId>,
    ) -> Result<Agent, AgentError> {
        if self.last_serial.is_some_and(|last| serial <= last) {
            return Err(AgentError::DuplicateId {
                server: self.keys.owner.clone(),
                serial,
            });
        }
        let code_area = CodeArea {
            code,
            id: AgentId::new(self.keys.owner.clone(), serial),
            route_servers,
        };
        let agent = mint_agent(&self.keys, code_area, trip)?;
        self.last_serial = Some(serial);
        Ok(agent)
    }
}

/// Signs `code_area` and wraps it with an empty data area. No serial
/// bookkeeping; [`AgentServer::mint`] adds that.
pub fn mint_agent(keys: &KeyPair, code_area: CodeArea, trip: u64) -> Result<Agent, AgentError> {
    let code_signature = code_area.sign_with(&keys.private)?;
    Ok(Agent {
        code_area,
        code_signature,
        server_pub: keys.public.clone(),
        data_area: Vec::new(),
        trip,
    })
}

/// Checks the code area against the server's certified key.
pub fn verify_code(agent: &Agent, server_cert: &Certificate, trust: &TrustAnchor) -> Verdict {
    if !trust.accepts(server_cert) || server_cert.subject != agent.code_area.id.server_id {
        return Verdict::Fail(FailReason::BadCertificate);
    }
    if server_cert.subject_key != agent.server_pub {
        return Verdict::Fail(FailReason::KeyMismatch);
    }
    verify_code_self(agent)
}

/// Checks only that the code signature verifies under the key the agent
/// carries. This is all a host without an independent copy of the server
/// key can do.
pub fn verify_code_self(agent: &Agent) -> Verdict {
    if verify(
        &agent.server_pub,
        &agent.code_area.to_canonical(),
        &agent.code_signature,
    ) {
        Verdict::Pass
    } else {
        Verdict::Fail(FailReason::CodeTampered)
    }
}

/// Multiplicity of each agent ID among `observed`.
pub fn count_clones<'a>(observed: impl IntoIterator<Item = &'a Agent>) -> BTreeMap<AgentId, usize> {
    let mut counts = BTreeMap::new();
    for agent in observed {
        *counts.entry(agent.id().clone()).or_insert(0) += 1;
    }
    counts
}
