use serde::Serialize;

use crate::agent::AgentId;
use crate::crypto::{Digest, HostId};
use crate::protection::{FreshnessField, ProtectionMode};
use crate::verdict::Verdict;

/// Which journey an event belongs to. Earlier trips and decoy agents run
/// before the main trip when an attack needs material from them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    PriorTrip,
    Decoy,
    Main,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Minted {
        agent: AgentId,
        trip: u64,
        digest: Digest,
    },
    Arrive {
        phase: Phase,
        host: HostId,
        agent: AgentId,
        digest: Digest,
    },
    CodeCheck {
        host: HostId,
        verdict: Verdict,
    },
    EntryCheck {
        host: HostId,
        provider: HostId,
        index: u64,
        verdict: Verdict,
    },
    Quarantine {
        host: HostId,
    },
    Append {
        host: HostId,
        index: u64,
        mode: ProtectionMode,
        fresh: FreshnessField,
    },
    Registry {
        rs: HostId,
        line: String,
    },
    UnknownRegistry {
        host: HostId,
        rs: HostId,
    },
    Attack {
        host: HostId,
        action: String,
    },
    CloneObserved {
        observer: HostId,
        agent: AgentId,
        count: usize,
    },
    Returned {
        agent: AgentId,
        digest: Digest,
    },
    Lost {
        agent: AgentId,
    },
    Audit {
        anomalies: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TranscriptHeader {
    pub scenario: String,
    pub seed: u64,
    pub mode: ProtectionMode,
    pub ca_enabled: bool,
}

/// Ordered record of one scenario run, written as JSON lines: the header
/// first, then one event per line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transcript {
    pub header: TranscriptHeader,
    pub events: Vec<Event>,
}

impl Transcript {
    pub fn to_jsonl(&self) -> String {
        let mut out = to_line(&self.header);
        for e in &self.events {
            out.push_str(&to_line(e));
        }
        out
    }

    /// Wire lines exchanged with route server `rs`, in order.
    pub fn registry_lines<'a>(&'a self, rs: &'a HostId) -> impl Iterator<Item = &'a str> + 'a {
        self.events.iter().filter_map(move |e| match e {
            Event::Registry { rs: name, line } if name == rs => Some(line.as_str()),
            _ => None,
        })
    }
}

fn to_line<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string(value).expect("transcript values serialize");
    s.push('\n');
    s
}
