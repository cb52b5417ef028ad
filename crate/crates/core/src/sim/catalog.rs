//! Ready-made scenarios, one per attack kind, varied by seed.

use super::config::{AttackKind, HostConfig, ScenarioConfig};
use crate::crypto::HostId;
use crate::protection::ProtectionMode;

/// Modes that bind entries to the agent and to a registered freshness
/// field. Replay detection needs one of these.
pub const BOUND_MODES: [ProtectionMode; 3] = [
    ProtectionMode::ImprovedSigned,
    ProtectionMode::ImprovedEncrypted,
    ProtectionMode::PartialEncrypted,
];

pub const ATTACK_NAMES: [&str; 10] = [
    "remove_message",
    "replace_with_old",
    "cross_agent_replay",
    "tamper_code_resign",
    "brainwash",
    "kill_agent",
    "clone_agent",
    "middleman_key_swap",
    "stale_record_replay",
    "colluding_key_theft",
];

/// All-honest route `h1..hN`.
pub fn honest(seed: u64, mode: ProtectionMode, len: usize) -> ScenarioConfig {
    let ids: Vec<String> = (1..=len).map(|i| format!("h{i}")).collect();
    let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
    ScenarioConfig::honest(&format!("honest-{mode}-{len}"), seed, mode, &refs)
}

/// Layout of a catalog scenario: who attacks and whom.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Placement {
    pub attacker: usize,
    pub target: usize,
    pub index: u64,
    pub copies: u64,
}

impl Placement {
    pub fn for_seed(seed: u64, route_len: usize, messages_per_visit: u64) -> Self {
        let len = route_len as u64;
        let attacker = 1 + seed % (len - 2);
        Self {
            attacker: attacker as usize,
            target: (seed / 7 % attacker) as usize,
            index: 1 + seed / 3 % messages_per_visit,
            copies: 2 + seed % 4,
        }
    }
}

/// One scenario for attack `name`, with route length, mode, host positions
/// and parameters all drawn from `seed`. Every honest host that follows
/// the attacker still gets to see the agent.
pub fn attack(name: &str, seed: u64) -> Option<(ScenarioConfig, Placement)> {
    let len = 4 + (seed % 3) as usize;
    let mode = BOUND_MODES[(seed / 3 % 3) as usize];
    let mut cfg = honest(seed, mode, len);
    cfg.name = format!("{name}-{seed}");
    cfg.messages_per_visit = 1 + seed / 5 % 2;
    let p = Placement::for_seed(seed, len, cfg.messages_per_visit);
    let target = cfg.route[p.target].clone();
    let kind = match name {
        "remove_message" => AttackKind::RemoveMessage {
            target,
            index: p.index,
        },
        "replace_with_old" => AttackKind::ReplaceWithOld {
            target,
            index: p.index,
        },
        "cross_agent_replay" => AttackKind::CrossAgentReplay {
            target,
            index: p.index,
        },
        "tamper_code_resign" => AttackKind::TamperCodeResign,
        "brainwash" => AttackKind::Brainwash,
        "kill_agent" => AttackKind::KillAgent,
        "clone_agent" => AttackKind::CloneAgent { copies: p.copies },
        "middleman_key_swap" => AttackKind::MiddlemanKeySwap { target },
        "stale_record_replay" => AttackKind::StaleRecordReplay { target },
        "colluding_key_theft" => {
            // Thief at `target`, partner one place after `attacker`.
            let partner = cfg.route[p.attacker + 1].clone();
            let thief = cfg.route[p.target].clone();
            set_attack(&mut cfg, &thief, AttackKind::ColludingKeyTheft { partner });
            return Some((cfg, p));
        }
        _ => return None,
    };
    let attacker = cfg.route[p.attacker].clone();
    set_attack(&mut cfg, &attacker, kind);
    Some((cfg, p))
}

fn set_attack(cfg: &mut ScenarioConfig, id: &HostId, kind: AttackKind) {
    match cfg.hosts.iter_mut().find(|h| &h.id == id) {
        Some(h) => h.attack = Some(kind),
        None => cfg.hosts.push(HostConfig {
            id: id.clone(),
            attack: Some(kind),
            server_key_known: true,
        }),
    }
}
