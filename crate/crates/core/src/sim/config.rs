use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::SetupError;
use crate::crypto::HostId;
use crate::protection::ProtectionMode;

/// Scenario description, read from TOML.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub mode: ProtectionMode,
    #[serde(default = "default_true")]
    pub ca_enabled: bool,
    #[serde(default = "default_server")]
    pub server: HostId,
    #[serde(default = "default_route_servers")]
    pub route_servers: Vec<HostId>,
    #[serde(default = "default_one")]
    pub agent_serial: u64,
    #[serde(default = "default_one")]
    pub trip: u64,
    #[serde(default = "default_one")]
    pub messages_per_visit: u64,
    #[serde(default = "default_code")]
    pub code: String,
    pub route: Vec<HostId>,
    pub hosts: Vec<HostConfig>,
    #[serde(default, skip_serializing_if = "OutputConfig::is_empty")]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostConfig {
    pub id: HostId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackKind>,
    /// Whether this host holds the agent server's certificate and checks
    /// the embedded key against it. Without it only self-consistency of
    /// the code signature can be checked.
    #[serde(default = "default_true")]
    pub server_key_known: bool,
}

impl HostConfig {
    pub fn honest(id: impl Into<String>) -> Self {
        Self {
            id: HostId::new(id),
            attack: None,
            server_key_known: true,
        }
    }

    pub fn attacker(id: impl Into<String>, attack: AttackKind) -> Self {
        Self {
            attack: Some(attack),
            ..Self::honest(id)
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Key bundle written by `keygen`. Keys are derived from `seed` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keys: Option<PathBuf>,
}

impl OutputConfig {
    fn is_empty(&self) -> bool {
        self.out_dir.is_none() && self.keys.is_none()
    }
}

/// Malicious host strategies. Targets name honest hosts that come earlier
/// on the route; indices are 1-based message indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackKind {
    RemoveMessage { target: HostId, index: u64 },
    ReplaceWithOld { target: HostId, index: u64 },
    CrossAgentReplay { target: HostId, index: u64 },
    TamperCodeResign,
    Brainwash,
    KillAgent,
    CloneAgent { copies: u64 },
    MiddlemanKeySwap { target: HostId },
    StaleRecordReplay { target: HostId },
    ColludingKeyTheft { partner: HostId },
}

impl AttackKind {
    pub fn name(&self) -> &'static str {
        match self {
            AttackKind::RemoveMessage { .. } => "remove_message",
            AttackKind::ReplaceWithOld { .. } => "replace_with_old",
            AttackKind::CrossAgentReplay { .. } => "cross_agent_replay",
            AttackKind::TamperCodeResign => "tamper_code_resign",
            AttackKind::Brainwash => "brainwash",
            AttackKind::KillAgent => "kill_agent",
            AttackKind::CloneAgent { .. } => "clone_agent",
            AttackKind::MiddlemanKeySwap { .. } => "middleman_key_swap",
            AttackKind::StaleRecordReplay { .. } => "stale_record_replay",
            AttackKind::ColludingKeyTheft { .. } => "colluding_key_theft",
        }
    }

    /// Needs an earlier trip of the same agent to harvest old data.
    pub fn needs_prior_trip(&self) -> bool {
        matches!(
            self,
            AttackKind::ReplaceWithOld { .. } | AttackKind::StaleRecordReplay { .. }
        )
    }

    /// Needs a second agent to have travelled the route first.
    pub fn needs_decoy(&self) -> bool {
        matches!(self, AttackKind::CrossAgentReplay { .. })
    }

    fn target(&self) -> Option<(&HostId, Option<u64>)> {
        match self {
            AttackKind::RemoveMessage { target, index }
            | AttackKind::ReplaceWithOld { target, index }
            | AttackKind::CrossAgentReplay { target, index } => Some((target, Some(*index))),
            AttackKind::MiddlemanKeySwap { target } | AttackKind::StaleRecordReplay { target } => {
                Some((target, None))
            }
            _ => None,
        }
    }
}

fn default_true() -> bool {
    true
}

fn default_one() -> u64 {
    1
}

fn default_server() -> HostId {
    HostId::new("server")
}

fn default_route_servers() -> Vec<HostId> {
    vec![HostId::new("rs-1")]
}

fn default_code() -> String {
    "collect offers; return to origin".to_string()
}

impl ScenarioConfig {
    /// Minimal all-honest scenario over `route`.
    pub fn honest(name: &str, seed: u64, mode: ProtectionMode, route: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            seed,
            mode,
            ca_enabled: true,
            server: default_server(),
            route_servers: default_route_servers(),
            agent_serial: 1,
            trip: 1,
            messages_per_visit: 1,
            code: default_code(),
            route: route.iter().map(|h| HostId::new(*h)).collect(),
            hosts: route.iter().map(|h| HostConfig::honest(*h)).collect(),
            output: OutputConfig::default(),
        }
    }

    /// Replaces the behaviour of host `id`.
    pub fn with_attack(mut self, id: &str, attack: AttackKind) -> Self {
        if let Some(h) = self.hosts.iter_mut().find(|h| h.id.as_str() == id) {
            h.attack = Some(attack);
        }
        self
    }

    pub fn from_toml(text: &str) -> Result<Self, SetupError> {
        let cfg: Self = toml::from_str(text).map_err(|e| SetupError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, SetupError> {
        toml::to_string(self).map_err(|e| SetupError::Config(e.to_string()))
    }

    pub fn host(&self, id: &HostId) -> Option<&HostConfig> {
        self.hosts.iter().find(|h| &h.id == id)
    }

    pub fn is_attacker(&self, id: &HostId) -> bool {
        self.host(id).is_some_and(|h| h.attack.is_some())
    }

    /// Hosts acting as the receiving half of a key-theft collusion.
    pub fn colluding_partners(&self) -> BTreeSet<&HostId> {
        self.hosts
            .iter()
            .filter_map(|h| match &h.attack {
                Some(AttackKind::ColludingKeyTheft { partner }) => Some(partner),
                _ => None,
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), SetupError> {
        let bad = |msg: String| Err(SetupError::Config(msg));
        if self.seed > i64::MAX as u64 {
            return bad("seed must fit in a signed 64-bit integer".into());
        }
        if self.route.is_empty() {
            return bad("route is empty".into());
        }
        if self.route_servers.is_empty() {
            return bad("no route servers".into());
        }
        if self.trip == 0 || self.agent_serial == 0 || self.messages_per_visit == 0 {
            return bad("trip, agent_serial and messages_per_visit start at 1".into());
        }
        let mut seen = BTreeSet::new();
        for h in &self.hosts {
            if !seen.insert(&h.id) {
                return bad(format!("host {} listed twice", h.id));
            }
        }
        let mut on_route = BTreeSet::new();
        for id in &self.route {
            if !on_route.insert(id) {
                return bad(format!("host {id} appears twice on the route"));
            }
            if self.host(id).is_none() {
                return Err(SetupError::MissingBehavior(id.clone()));
            }
            if id == &self.server || self.route_servers.contains(id) {
                return bad(format!("{id} cannot be both a route host and a server"));
            }
        }
        let partners = self.colluding_partners();
        let pos = |id: &HostId| self.route.iter().position(|h| h == id);
        for (i, id) in self.route.iter().enumerate() {
            let Some(attack) = &self.host(id).and_then(|h| h.attack.as_ref()) else {
                continue;
            };
            if partners.contains(id) {
                return bad(format!(
                    "{id} cannot both attack and act as a colluding partner"
                ));
            }
            if let Some((target, index)) = attack.target() {
                match pos(target) {
                    Some(t) if t < i => {}
                    _ => {
                        return bad(format!(
                            "{id}: target {target} must precede it on the route"
                        ))
                    }
                }
                if self.is_attacker(target) || partners.contains(target) {
                    return bad(format!("{id}: target {target} must be honest"));
                }
                if let Some(index) = index {
                    if index == 0 || index > self.messages_per_visit {
                        return bad(format!("{id}: index {index} out of range"));
                    }
                }
            }
            match attack {
                AttackKind::CloneAgent { copies } if *copies < 2 => {
                    return bad(format!("{id}: clone needs at least 2 copies"));
                }
                AttackKind::ColludingKeyTheft { partner } => match pos(partner) {
                    Some(p) if p > i && !self.is_attacker(partner) => {}
                    _ => {
                        return bad(format!(
                            "{id}: partner {partner} must be a later host without its own attack"
                        ))
                    }
                },
                _ => {}
            }
        }
        Ok(())
    }
}
