//! Route servers: signed per-(agent, host) freshness-field records,
//! accepted only under a fresh challenge signed by the owning host.
//!
//! A route server is trusted for availability and challenge freshness
//! only. Records are stored verbatim with the provider's signature and
//! every reader is expected to re-verify them.

pub mod wire;

use std::collections::{BTreeMap, BTreeSet};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::agent::AgentId;
use crate::crypto::{
    digest, sign, verify, Certificate, CryptoError, Digest, HostId, KeyPair, PrivateKey, Signature,
    TrustAnchor,
};
use crate::encoding::{Canonical, DecodeError, Decoder, Encoder};
use crate::protection::FreshnessField;
use crate::verdict::{FailReason, Verdict};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("a field record needs at least one field")]
    EmptyRecord,
    #[error("duplicate freshness field {0}")]
    DuplicateField(FreshnessField),
    #[error("challenge already in flight for {host} / {agent}")]
    ChallengeInFlight { host: HostId, agent: AgentId },
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// A host's signed list of the freshness fields it issued to one agent.
/// The list length is the number of messages the host provided.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldRecord {
    pub agent_id: AgentId,
    pub provider: HostId,
    pub fields: Vec<FreshnessField>,
    pub signature: Signature,
}

impl FieldRecord {
    pub fn signed_bytes(
        agent_id: &AgentId,
        provider: &HostId,
        fields: &[FreshnessField],
    ) -> Vec<u8> {
        Encoder::new()
            .nested(agent_id)
            .nested(provider)
            .list(fields)
            .finish()
    }
}

impl Canonical for FieldRecord {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.nested(&self.agent_id)
            .nested(&self.provider)
            .list(&self.fields)
            .nested(&self.signature);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            agent_id: dec.nested()?,
            provider: dec.nested()?,
            fields: dec.list()?,
            signature: dec.nested()?,
        })
    }
}

fn check_fields(fields: &[FreshnessField]) -> Result<(), RegistryError> {
    if fields.is_empty() {
        return Err(RegistryError::EmptyRecord);
    }
    let mut seen = BTreeSet::new();
    for f in fields {
        if !seen.insert(f) {
            return Err(RegistryError::DuplicateField(*f));
        }
    }
    Ok(())
}

pub fn build_field_record(
    host: &KeyPair,
    agent_id: AgentId,
    fields: Vec<FreshnessField>,
) -> Result<FieldRecord, RegistryError> {
    check_fields(&fields)?;
    let signature = sign(
        &host.private,
        &FieldRecord::signed_bytes(&agent_id, &host.owner, &fields),
    )?;
    Ok(FieldRecord {
        agent_id,
        provider: host.owner.clone(),
        fields,
        signature,
    })
}

pub fn verify_field_record(
    record: &FieldRecord,
    cert: &Certificate,
    trust: &TrustAnchor,
) -> Verdict {
    if !trust.accepts(cert) || cert.subject != record.provider {
        return Verdict::Fail(FailReason::BadCertificate);
    }
    if check_fields(&record.fields).is_err() {
        return Verdict::Fail(FailReason::BadRecord);
    }
    let bytes = FieldRecord::signed_bytes(&record.agent_id, &record.provider, &record.fields);
    if verify(&cert.subject_key, &bytes, &record.signature) {
        Verdict::Pass
    } else {
        Verdict::Fail(FailReason::BadSignature)
    }
}

/// Number of messages the provider claims to have given the agent.
pub fn expected_count(record: &FieldRecord) -> u64 {
    record.fields.len() as u64
}

/// Single-use random challenge for one (host, agent) submission.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Challenge {
    pub nonce: [u8; 32],
    pub issued_to: HostId,
    pub agent_id: AgentId,
}

impl Challenge {
    pub fn respond(&self, key: &PrivateKey) -> Result<Signature, CryptoError> {
        sign(key, &self.nonce)
    }
}

impl Canonical for Challenge {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.field(&self.nonce)
            .nested(&self.issued_to)
            .nested(&self.agent_id);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            nonce: dec.array()?,
            issued_to: dec.nested()?,
            agent_id: dec.nested()?,
        })
    }
}

/// Read access to stored records, shared by live registries and exported
/// snapshots.
pub trait RecordSource {
    fn name(&self) -> &HostId;
    fn query(&self, agent_id: &AgentId, host: &HostId) -> Option<&FieldRecord>;
    fn records_for(&self, agent_id: &AgentId) -> Vec<&FieldRecord>;
}

/// One route server. Mutations take `&mut self`; wrap in a lock to share.
#[derive(Debug, Clone)]
pub struct RegistryState {
    name: HostId,
    trust: TrustAnchor,
    records: BTreeMap<(AgentId, HostId), FieldRecord>,
    pending: BTreeMap<(HostId, AgentId), Challenge>,
    rng: ChaCha20Rng,
}

impl RegistryState {
    pub fn new(name: HostId, trust: TrustAnchor, seed: [u8; 32]) -> Self {
        Self {
            name,
            trust,
            records: BTreeMap::new(),
            pending: BTreeMap::new(),
            rng: ChaCha20Rng::from_seed(seed),
        }
    }

    pub fn trust(&self) -> &TrustAnchor {
        &self.trust
    }

    pub fn open_challenge(
        &mut self,
        host: HostId,
        agent_id: AgentId,
    ) -> Result<Challenge, RegistryError> {
        let key = (host, agent_id);
        if self.pending.contains_key(&key) {
            let (host, agent) = key;
            return Err(RegistryError::ChallengeInFlight { host, agent });
        }
        let mut nonce = [0u8; 32];
        self.rng.fill_bytes(&mut nonce);
        let challenge = Challenge {
            nonce,
            issued_to: key.0.clone(),
            agent_id: key.1.clone(),
        };
        self.pending.insert(key, challenge.clone());
        Ok(challenge)
    }

    pub fn pending_challenge(&self, host: &HostId, agent_id: &AgentId) -> Option<&Challenge> {
        self.pending.get(&(host.clone(), agent_id.clone()))
    }

    /// Accepts `record` only if the provider's live challenge is answered
    /// by `challenge_sig` under the certified key. A rejected submission
    /// leaves the state untouched; an accepted one replaces any earlier
    /// record for the same (agent, host) and consumes the challenge.
    pub fn submit(
        &mut self,
        record: FieldRecord,
        challenge_sig: &Signature,
        cert: &Certificate,
    ) -> Verdict {
        let key = (record.provider.clone(), record.agent_id.clone());
        let Some(challenge) = self.pending.get(&key) else {
            return Verdict::Fail(FailReason::BadChallenge);
        };
        if cert.subject != record.provider || !self.trust.accepts(cert) {
            return Verdict::Fail(FailReason::BadCertificate);
        }
        if !verify(&cert.subject_key, &challenge.nonce, challenge_sig) {
            return Verdict::Fail(FailReason::BadChallenge);
        }
        let verdict = verify_field_record(&record, cert, &self.trust);
        if verdict.is_fail() {
            return verdict;
        }
        self.pending.remove(&key);
        self.records
            .insert((record.agent_id.clone(), record.provider.clone()), record);
        Verdict::Pass
    }

    /// Digest over stored records and live challenges.
    pub fn state_hash(&self) -> Digest {
        let records: Vec<FieldRecord> = self.records.values().cloned().collect();
        let pending: Vec<Challenge> = self.pending.values().cloned().collect();
        digest(
            &Encoder::new()
                .nested(&self.name)
                .list(&records)
                .list(&pending)
                .finish(),
        )
    }

    pub fn snapshot(&self) -> RegistrySnapshot {
        RegistrySnapshot {
            name: self.name.clone(),
            records: self.records.values().cloned().collect(),
        }
    }
}

impl RecordSource for RegistryState {
    fn name(&self) -> &HostId {
        &self.name
    }

    fn query(&self, agent_id: &AgentId, host: &HostId) -> Option<&FieldRecord> {
        self.records.get(&(agent_id.clone(), host.clone()))
    }

    fn records_for(&self, agent_id: &AgentId) -> Vec<&FieldRecord> {
        self.records
            .range((agent_id.clone(), HostId::new(""))..)
            .take_while(|((a, _), _)| a == agent_id)
            .map(|(_, r)| r)
            .collect()
    }
}

/// Stored records of one route server, as exported for offline audit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistrySnapshot {
    pub name: HostId,
    pub records: Vec<FieldRecord>,
}

impl RecordSource for RegistrySnapshot {
    fn name(&self) -> &HostId {
        &self.name
    }

    fn query(&self, agent_id: &AgentId, host: &HostId) -> Option<&FieldRecord> {
        self.records
            .iter()
            .find(|r| &r.agent_id == agent_id && &r.provider == host)
    }

    fn records_for(&self, agent_id: &AgentId) -> Vec<&FieldRecord> {
        self.records
            .iter()
            .filter(|r| &r.agent_id == agent_id)
            .collect()
    }
}

impl Canonical for RegistrySnapshot {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.nested(&self.name).list(&self.records);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            name: dec.nested()?,
            records: dec.list()?,
        })
    }
}
