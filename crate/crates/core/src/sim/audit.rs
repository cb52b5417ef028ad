use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::agent::{verify_code, Agent, AgentId, DataEntry};
use crate::crypto::{CertDirectory, Digest, HostId, PrivateKey, TrustAnchor};
use crate::protection::{check_entry, ProtectionMode};
use crate::registry::{expected_count, RecordSource};
use crate::verdict::{FailReason, Verdict};

/// What an anomaly is about.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Subject {
    Code,
    Entry { provider: HostId, index: u64 },
    Provider { provider: HostId },
    Registry { name: HostId },
    Agent,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Anomaly {
    pub subject: Subject,
    pub finding: String,
    pub observer: HostId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EntryAudit {
    pub provider: HostId,
    pub index: u64,
    pub mode: ProtectionMode,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProviderCount {
    pub provider: HostId,
    pub expected: u64,
    pub present: u64,
}

/// Result of checking a returned agent against the route servers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditReport {
    pub agent: AgentId,
    pub trip: u64,
    pub digest: Digest,
    pub code: Verdict,
    pub entries: Vec<EntryAudit>,
    pub counts: Vec<ProviderCount>,
    /// Providers with a record but no surviving entry.
    pub erased: Vec<HostId>,
    /// Route servers whose records disagree with the first one.
    pub divergent: Vec<HostId>,
    pub anomalies: Vec<Anomaly>,
}

impl AuditReport {
    pub fn entry(&self, provider: &HostId, index: u64) -> Option<&EntryAudit> {
        self.entries
            .iter()
            .find(|e| &e.provider == provider && e.index == index)
    }

    pub fn count(&self, provider: &HostId) -> Option<&ProviderCount> {
        self.counts.iter().find(|c| &c.provider == provider)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("audit report serializes");
        s.push('\n');
        s
    }
}

/// Subject a failing entry verdict is charged to. Binding failures count
/// against the code when the code check itself failed.
pub fn attribute(code: &Verdict, entry: &DataEntry, verdict: &Verdict) -> Subject {
    match verdict.reason() {
        Some(FailReason::CrcMismatch | FailReason::CodeTampered) if code.is_fail() => Subject::Code,
        _ => Subject::Entry {
            provider: entry.provider.clone(),
            index: entry.msg_index,
        },
    }
}

/// Verifies code and every entry of `agent`, then compares per-provider
/// entry counts with the records held by `registries`. The first registry
/// is authoritative for freshness checks; the rest are compared with it.
pub fn final_audit<S: RecordSource>(
    agent: &Agent,
    registries: &[S],
    directory: &CertDirectory,
    trust: &TrustAnchor,
    server_priv: Option<&PrivateKey>,
    observer: &HostId,
) -> AuditReport {
    let id = agent.id();
    let mut anomalies = BTreeSet::new();
    let mut note = |subject, finding: String| {
        anomalies.insert(Anomaly {
            subject,
            finding,
            observer: observer.clone(),
        });
    };

    let code = match directory.get(&id.server_id) {
        Some(cert) => verify_code(agent, cert, trust),
        None => Verdict::Fail(FailReason::BadCertificate),
    };
    if let Some(r) = code.reason() {
        note(Subject::Code, format!("code {r}"));
    }

    let primary = registries.first();
    let mut entries = Vec::with_capacity(agent.data_area.len());
    for e in &agent.data_area {
        let record = primary.and_then(|rs| rs.query(id, &e.provider));
        let verdict = check_entry(e, agent, directory, trust, record, server_priv);
        if let Some(r) = verdict.reason() {
            note(attribute(&code, e, &verdict), format!("entry {r}"));
        }
        entries.push(EntryAudit {
            provider: e.provider.clone(),
            index: e.msg_index,
            mode: e.mode(),
            verdict,
        });
    }

    let mut tally: BTreeMap<&HostId, (u64, u64)> = BTreeMap::new();
    if let Some(rs) = primary {
        for rec in rs.records_for(id) {
            tally.entry(&rec.provider).or_default().0 = expected_count(rec);
        }
    }
    for e in &agent.data_area {
        tally.entry(&e.provider).or_default().1 += 1;
    }
    let mut counts = Vec::with_capacity(tally.len());
    let mut erased = Vec::new();
    for (provider, (expected, present)) in tally {
        if present == 0 && expected > 0 {
            erased.push(provider.clone());
            note(
                Subject::Provider {
                    provider: provider.clone(),
                },
                format!("all {expected} entries erased"),
            );
        } else if present != expected {
            note(
                Subject::Provider {
                    provider: provider.clone(),
                },
                format!("count mismatch: expected {expected}, found {present}"),
            );
        }
        counts.push(ProviderCount {
            provider: provider.clone(),
            expected,
            present,
        });
    }

    let mut divergent = Vec::new();
    if let Some((first, rest)) = registries.split_first() {
        let reference = first.records_for(id);
        for rs in rest {
            if rs.records_for(id) != reference {
                divergent.push(rs.name().clone());
                note(
                    Subject::Registry {
                        name: rs.name().clone(),
                    },
                    format!("records differ from {}", first.name()),
                );
            }
        }
    }

    AuditReport {
        agent: id.clone(),
        trip: agent.trip,
        digest: agent.digest(),
        code,
        entries,
        counts,
        erased,
        divergent,
        anomalies: anomalies.into_iter().collect(),
    }
}
