use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use super::audit::{attribute, final_audit, Anomaly, AuditReport, EntryAudit, Subject};
use super::config::{AttackKind, ScenarioConfig};
use super::keys::ScenarioKeys;
use super::transcript::{Event, Phase, Transcript, TranscriptHeader};
use super::SetupError;
use crate::agent::{
    count_clones, verify_code, verify_code_self, Agent, AgentId, AgentServer, DataEntry, Route,
};
use crate::crypto::{
    ca_issue, derive_seed, CertDirectory, Certificate, HostId, KeyPair, Signature, TrustAnchor,
};
use crate::encoding::Canonical;
use crate::protection::{check_entry, ProtectionMode, Provider};
use crate::registry::wire::{Request, Response};
use crate::registry::{build_field_record, FieldRecord, RecordSource, RegistryState};
use crate::verdict::Verdict;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HopCheck {
    pub phase: Phase,
    pub host: HostId,
    pub code: Verdict,
    pub entries: Vec<EntryAudit>,
    pub quarantined: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CloneObservation {
    pub observer: HostId,
    pub agent: AgentId,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RegistryRejection {
    pub rs: HostId,
    pub provider: HostId,
    pub submitted_by: HostId,
    pub verdict: Verdict,
    pub state_unchanged: bool,
}

/// What the server can learn about a lost agent from the route servers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KillEvidence {
    pub last_registrant: Option<HostId>,
    pub suspect: HostId,
}

/// Ground truth for one malicious action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AttackRecord {
    pub host: HostId,
    pub kind: String,
    pub affected: Vec<Subject>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub seed: u64,
    pub mode: ProtectionMode,
    pub ca_enabled: bool,
    pub agent: AgentId,
    pub returned: bool,
    pub hop_checks: Vec<HopCheck>,
    pub clones: Vec<CloneObservation>,
    pub registry_rejections: Vec<RegistryRejection>,
    pub kill: Option<KillEvidence>,
    pub final_audit: Option<AuditReport>,
    pub attacks: Vec<AttackRecord>,
    pub anomalies: Vec<Anomaly>,
}

impl ScenarioReport {
    pub fn has_anomalies(&self) -> bool {
        !self.anomalies.is_empty()
    }

    /// Anomalies pointing at something no recorded attack touched.
    pub fn false_attributions(&self) -> Vec<&Anomaly> {
        let touched: BTreeSet<&Subject> = self.attacks.iter().flat_map(|a| &a.affected).collect();
        self.anomalies
            .iter()
            .filter(|a| !touched.contains(&a.subject))
            .collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scenario report serializes");
        s.push('\n');
        s
    }
}

/// Everything a run leaves behind.
#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub transcript: Transcript,
    pub report: ScenarioReport,
    /// The agent as it reached the server, if it did.
    pub agent: Option<Agent>,
    pub registries: Vec<RegistryState>,
    /// Certificate directory as it stood at the end, including any
    /// substitutions made by attackers.
    pub directory: CertDirectory,
    pub trust: TrustAnchor,
}

enum Role<'a> {
    Honest,
    Passive,
    Attack(&'a AttackKind),
    Partner,
}

enum AfterAttack {
    Continue,
    Killed,
    Cloned(Vec<Agent>),
}

struct Sim<'a> {
    cfg: &'a ScenarioConfig,
    keys: &'a ScenarioKeys,
    trust: TrustAnchor,
    directory: CertDirectory,
    registries: Vec<RegistryState>,
    providers: BTreeMap<HostId, Provider<ChaCha20Rng>>,
    events: Vec<Event>,
    hop_checks: Vec<HopCheck>,
    clones: Vec<CloneObservation>,
    rejections: Vec<RegistryRejection>,
    attacks: Vec<AttackRecord>,
    anomalies: BTreeSet<Anomaly>,
    // Material gathered by attackers on earlier journeys.
    captured_entries: BTreeMap<HostId, DataEntry>,
    wiretap: Vec<(usize, FieldRecord, Signature)>,
    captured_records: BTreeMap<HostId, Vec<(usize, FieldRecord, Signature)>>,
    stolen_keys: BTreeMap<HostId, Vec<KeyPair>>,
}

/// Walks the configured agent along its route and audits what comes back.
///
/// Honest hosts check the code and the existing entries, append
/// `messages_per_visit` protected messages and register their freshness
/// fields with every route server named in the code area. Malicious hosts
/// neither append nor register; they apply their attack and pass the agent on.
pub fn run_scenario(
    cfg: &ScenarioConfig,
    keys: &ScenarioKeys,
) -> Result<ScenarioOutcome, SetupError> {
    cfg.validate()?;
    let route = Route::new(cfg.route.clone(), cfg.trip)?;
    let server_keys = keys.key(&cfg.server)?.clone();
    keys.cert(&cfg.server)?;
    for host in route.hosts() {
        keys.key(host)?;
        keys.cert(host)?;
    }

    let trust = if cfg.ca_enabled {
        TrustAnchor::Ca(keys.ca.public.clone())
    } else {
        TrustAnchor::Unverified
    };
    let registries = cfg
        .route_servers
        .iter()
        .map(|rs| {
            RegistryState::new(
                rs.clone(),
                trust.clone(),
                derive_seed(cfg.seed, &format!("rs/{rs}")),
            )
        })
        .collect();
    let providers = route
        .hosts()
        .iter()
        .map(|h| {
            let rng = ChaCha20Rng::from_seed(derive_seed(cfg.seed, &format!("provider/{h}")));
            (h.clone(), Provider::new(keys.keys[h].clone(), rng))
        })
        .collect();

    let mut sim = Sim {
        cfg,
        keys,
        trust: trust.clone(),
        directory: keys.certs.clone(),
        registries,
        providers,
        events: Vec::new(),
        hop_checks: Vec::new(),
        clones: Vec::new(),
        rejections: Vec::new(),
        attacks: Vec::new(),
        anomalies: BTreeSet::new(),
        captured_entries: BTreeMap::new(),
        wiretap: Vec::new(),
        captured_records: BTreeMap::new(),
        stolen_keys: BTreeMap::new(),
    };

    let attacks: Vec<&AttackKind> = cfg.hosts.iter().filter_map(|h| h.attack.as_ref()).collect();
    let mut server = AgentServer::new(server_keys.clone());
    let code = cfg.code.clone().into_bytes();
    let mut main = server.mint(
        code.clone(),
        cfg.agent_serial,
        cfg.trip,
        cfg.route_servers.clone(),
    )?;
    sim.minted(&main);

    if attacks.iter().any(|a| a.needs_decoy()) {
        let decoy = server.mint(
            code,
            cfg.agent_serial + 1,
            cfg.trip,
            cfg.route_servers.clone(),
        )?;
        sim.minted(&decoy);
        sim.travel(decoy, Phase::Decoy)?;
    }
    if attacks.iter().any(|a| a.needs_prior_trip()) {
        let earlier = Agent {
            trip: cfg.trip - 1,
            ..main.clone()
        };
        sim.minted(&earlier);
        sim.travel(earlier, Phase::PriorTrip)?;
        main.data_area.clear();
    }

    let returned = sim.travel(main.clone(), Phase::Main)?;
    let server_id = cfg.server.clone();
    let (final_report, kill) = match &returned {
        Some(agent) => {
            let report = final_audit(
                agent,
                &sim.registries,
                &sim.directory,
                &sim.trust,
                Some(&server_keys.private),
                &server_id,
            );
            sim.anomalies.extend(report.anomalies.iter().cloned());
            (Some(report), None)
        }
        None => {
            let evidence = sim.kill_evidence(main.id());
            let finding = match &evidence.last_registrant {
                Some(h) => format!(
                    "agent did not return; last registrant {h}, next host {}",
                    evidence.suspect
                ),
                None => format!(
                    "agent did not return; no host registered, first host {}",
                    evidence.suspect
                ),
            };
            sim.note(Subject::Agent, finding, &server_id);
            (None, Some(evidence))
        }
    };
    sim.events.push(Event::Audit {
        anomalies: sim.anomalies.len(),
    });

    let report = ScenarioReport {
        scenario: cfg.name.clone(),
        seed: cfg.seed,
        mode: cfg.mode,
        ca_enabled: cfg.ca_enabled,
        agent: main.id().clone(),
        returned: returned.is_some(),
        hop_checks: sim.hop_checks,
        clones: sim.clones,
        registry_rejections: sim.rejections,
        kill,
        final_audit: final_report,
        attacks: sim.attacks,
        anomalies: sim.anomalies.into_iter().collect(),
    };
    Ok(ScenarioOutcome {
        transcript: Transcript {
            header: TranscriptHeader {
                scenario: cfg.name.clone(),
                seed: cfg.seed,
                mode: cfg.mode,
                ca_enabled: cfg.ca_enabled,
            },
            events: sim.events,
        },
        report,
        agent: returned,
        registries: sim.registries,
        directory: sim.directory,
        trust,
    })
}

impl<'a> Sim<'a> {
    fn minted(&mut self, agent: &Agent) {
        self.events.push(Event::Minted {
            agent: agent.id().clone(),
            trip: agent.trip,
            digest: agent.digest(),
        });
    }

    fn note(&mut self, subject: Subject, finding: String, observer: &HostId) {
        self.anomalies.insert(Anomaly {
            subject,
            finding,
            observer: observer.clone(),
        });
    }

    fn attack_event(&mut self, host: &HostId, action: String) {
        self.events.push(Event::Attack {
            host: host.clone(),
            action,
        });
    }

    fn role(&self, host: &HostId, phase: Phase) -> Role<'a> {
        let cfg = self.cfg;
        let attack = cfg.host(host).and_then(|h| h.attack.as_ref());
        let partner = cfg.colluding_partners().contains(host);
        match (phase, attack, partner) {
            (_, None, false) => Role::Honest,
            (Phase::Main, Some(kind), _) => Role::Attack(kind),
            (Phase::Main, None, true) => Role::Partner,
            _ => Role::Passive,
        }
    }

    fn travel(&mut self, mut agent: Agent, phase: Phase) -> Result<Option<Agent>, SetupError> {
        let mut in_flight: Option<Vec<Agent>> = None;
        for host in &self.cfg.route {
            self.events.push(Event::Arrive {
                phase,
                host: host.clone(),
                agent: agent.id().clone(),
                digest: agent.digest(),
            });
            if let Some(copies) = in_flight.take() {
                self.observe_clones(host, &copies);
            }
            match self.role(host, phase) {
                Role::Honest => self.honest_visit(host, &mut agent, phase)?,
                Role::Passive => self.capture(host, &agent, phase),
                Role::Partner => self.collude(host, &mut agent)?,
                Role::Attack(kind) => match self.apply_attack(host, kind, &mut agent)? {
                    AfterAttack::Continue => {}
                    AfterAttack::Killed => {
                        self.events.push(Event::Lost {
                            agent: agent.id().clone(),
                        });
                        return Ok(None);
                    }
                    AfterAttack::Cloned(copies) => in_flight = Some(copies),
                },
            }
        }
        let server = self.cfg.server.clone();
        if let Some(copies) = in_flight {
            self.observe_clones(&server, &copies);
        }
        self.events.push(Event::Returned {
            agent: agent.id().clone(),
            digest: agent.digest(),
        });
        Ok(Some(agent))
    }

    fn observe_clones(&mut self, observer: &HostId, copies: &[Agent]) {
        for (agent, count) in count_clones(copies) {
            self.events.push(Event::CloneObserved {
                observer: observer.clone(),
                agent: agent.clone(),
                count,
            });
            if count > 1 {
                self.note(
                    Subject::Agent,
                    format!("{count} copies of {agent} received"),
                    observer,
                );
            }
            self.clones.push(CloneObservation {
                observer: observer.clone(),
                agent,
                count,
            });
        }
    }

    fn honest_visit(
        &mut self,
        host: &HostId,
        agent: &mut Agent,
        phase: Phase,
    ) -> Result<(), SetupError> {
        let knows_server = !self.cfg.host(host).is_some_and(|h| !h.server_key_known);
        let code = if knows_server {
            match self.directory.get(&agent.id().server_id) {
                Some(cert) => verify_code(agent, cert, &self.trust),
                None => Verdict::Fail(crate::verdict::FailReason::BadCertificate),
            }
        } else {
            verify_code_self(agent)
        };
        self.events.push(Event::CodeCheck {
            host: host.clone(),
            verdict: code,
        });
        if let Some(r) = code.reason() {
            self.note(Subject::Code, format!("code {r}"), host);
        }

        let mut entries = Vec::with_capacity(agent.data_area.len());
        for e in &agent.data_area {
            let record = self.registries[0].query(agent.id(), &e.provider);
            let verdict = check_entry(e, agent, &self.directory, &self.trust, record, None);
            self.events.push(Event::EntryCheck {
                host: host.clone(),
                provider: e.provider.clone(),
                index: e.msg_index,
                verdict,
            });
            if let Some(r) = verdict.reason() {
                let subject = attribute(&code, e, &verdict);
                self.anomalies.insert(Anomaly {
                    subject,
                    finding: format!("entry {r}"),
                    observer: host.clone(),
                });
            }
            entries.push(EntryAudit {
                provider: e.provider.clone(),
                index: e.msg_index,
                mode: e.mode(),
                verdict,
            });
        }
        let quarantined = code.is_fail();
        self.hop_checks.push(HopCheck {
            phase,
            host: host.clone(),
            code,
            entries,
            quarantined,
        });
        if quarantined {
            self.events.push(Event::Quarantine { host: host.clone() });
            return Ok(());
        }

        let provider = self
            .providers
            .get_mut(host)
            .expect("provider exists for route host");
        let mut fields = Vec::new();
        for k in 1..=self.cfg.messages_per_visit {
            let msg = format!(
                "offer {k} from {host} to {} on trip {}",
                agent.id(),
                agent.trip
            );
            let bound = provider.protect(self.cfg.mode, agent, msg.as_bytes())?;
            let index = agent.max_index(host) + 1;
            agent.append_entry(DataEntry {
                provider: host.clone(),
                msg_index: index,
                payload: bound.entry,
            })?;
            self.events.push(Event::Append {
                host: host.clone(),
                index,
                mode: self.cfg.mode,
                fresh: bound.fresh,
            });
            fields.push(bound.fresh);
        }

        let record = build_field_record(provider.keys(), agent.id().clone(), fields)?;
        let host_keys = self.keys.key(host)?;
        let cert = self.keys.cert(host)?;
        for rs in agent.code_area.route_servers.clone() {
            let Some(idx) = self.registry_index(&rs) else {
                self.events.push(Event::UnknownRegistry {
                    host: host.clone(),
                    rs,
                });
                continue;
            };
            let Some(challenge) = self.open_challenge(idx, host, agent.id()) else {
                continue;
            };
            let sig = challenge.respond(&host_keys.private)?;
            if phase != Phase::Main {
                self.wiretap.push((idx, record.clone(), sig.clone()));
            }
            self.submit(idx, record.clone(), &sig, cert, host);
        }
        Ok(())
    }

    fn registry_index(&self, name: &HostId) -> Option<usize> {
        self.registries.iter().position(|r| r.name() == name)
    }

    fn exchange(&mut self, idx: usize, req: Request) -> Response {
        let (resp, lines) = self.registries[idx].execute_logged(&req);
        let rs = self.registries[idx].name().clone();
        for line in lines {
            self.events.push(Event::Registry {
                rs: rs.clone(),
                line,
            });
        }
        resp
    }

    fn open_challenge(
        &mut self,
        idx: usize,
        host: &HostId,
        agent: &AgentId,
    ) -> Option<crate::registry::Challenge> {
        match self.exchange(
            idx,
            Request::OpenChallenge {
                host: host.clone(),
                agent_id: agent.clone(),
            },
        ) {
            Response::Challenge(c) => Some(c),
            _ => None,
        }
    }

    fn submit(
        &mut self,
        idx: usize,
        record: FieldRecord,
        sig: &Signature,
        cert: &Certificate,
        by: &HostId,
    ) -> Verdict {
        let before = self.registries[idx].state_hash();
        let provider = record.provider.clone();
        let resp = self.exchange(
            idx,
            Request::Submit {
                record,
                challenge_sig: sig.clone(),
                cert: cert.clone(),
            },
        );
        let verdict = match resp {
            Response::Verdict(v) => v,
            _ => Verdict::Fail(crate::verdict::FailReason::Malformed),
        };
        if let Some(r) = verdict.reason() {
            let rs = self.registries[idx].name().clone();
            let state_unchanged = self.registries[idx].state_hash() == before;
            self.note(
                Subject::Provider {
                    provider: provider.clone(),
                },
                format!("submission rejected: {r}"),
                &rs,
            );
            self.rejections.push(RegistryRejection {
                rs,
                provider,
                submitted_by: by.clone(),
                verdict,
                state_unchanged,
            });
        }
        verdict
    }

    /// Attackers ride along quietly on earlier journeys and keep what they
    /// will need later.
    fn capture(&mut self, host: &HostId, agent: &Agent, phase: Phase) {
        let Some(kind) = self.cfg.host(host).and_then(|h| h.attack.as_ref()) else {
            return;
        };
        match (kind, phase) {
            (AttackKind::ReplaceWithOld { target, index }, Phase::PriorTrip)
            | (AttackKind::CrossAgentReplay { target, index }, Phase::Decoy) => {
                if let Some(e) = agent.entry(target, *index) {
                    self.captured_entries.insert(host.clone(), e.clone());
                    self.attack_event(
                        host,
                        format!("copied entry {target}/{index} of {}", agent.id()),
                    );
                }
            }
            (AttackKind::StaleRecordReplay { target }, Phase::PriorTrip) => {
                let taken: Vec<_> = self
                    .wiretap
                    .iter()
                    .filter(|(_, r, _)| &r.provider == target && r.agent_id == *agent.id())
                    .cloned()
                    .collect();
                if !taken.is_empty() {
                    self.attack_event(
                        host,
                        format!("recorded {} submissions by {target}", taken.len()),
                    );
                    self.captured_records.insert(host.clone(), taken);
                }
            }
            _ => {}
        }
    }

    fn apply_attack(
        &mut self,
        host: &HostId,
        kind: &AttackKind,
        agent: &mut Agent,
    ) -> Result<AfterAttack, SetupError> {
        let own = self.keys.key(host)?.clone();
        let mut affected = Vec::new();
        let mut outcome = AfterAttack::Continue;
        match kind {
            AttackKind::RemoveMessage { target, index } => {
                if let Some(pos) = position(agent, target, *index) {
                    agent.data_area.remove(pos);
                    affected.push(entry_subject(target, *index));
                    affected.push(Subject::Provider {
                        provider: target.clone(),
                    });
                    self.attack_event(host, format!("removed entry {target}/{index}"));
                }
            }
            AttackKind::ReplaceWithOld { target, index }
            | AttackKind::CrossAgentReplay { target, index } => {
                let old = self.captured_entries.get(host).cloned();
                if let (Some(pos), Some(old)) = (position(agent, target, *index), old) {
                    agent.data_area[pos] = old;
                    affected.push(entry_subject(target, *index));
                    self.attack_event(
                        host,
                        format!("swapped in a captured copy of entry {target}/{index}"),
                    );
                }
            }
            AttackKind::TamperCodeResign => {
                affected.push(Subject::Code);
                affected.extend(
                    agent
                        .data_area
                        .iter()
                        .map(|e| entry_subject(&e.provider, e.msg_index)),
                );
                agent
                    .code_area
                    .code
                    .extend_from_slice(b"; forward offers to attacker");
                agent.code_signature = agent.code_area.sign_with(&own.private)?;
                agent.server_pub = own.public.clone();
                self.attack_event(host, "rewrote code and re-signed it with own key".into());
            }
            AttackKind::Brainwash => {
                affected.push(Subject::Code);
                let providers: BTreeSet<&HostId> =
                    agent.data_area.iter().map(|e| &e.provider).collect();
                affected.extend(providers.into_iter().map(|p| Subject::Provider {
                    provider: p.clone(),
                }));
                affected.extend(
                    agent
                        .data_area
                        .iter()
                        .map(|e| entry_subject(&e.provider, e.msg_index)),
                );
                let erased = agent.data_area.len();
                agent.data_area.clear();
                agent.code_signature = agent.code_area.sign_with(&own.private)?;
                agent.server_pub = own.public.clone();
                self.attack_event(
                    host,
                    format!("erased {erased} entries and re-signed code with own key"),
                );
            }
            AttackKind::KillAgent => {
                affected.push(Subject::Agent);
                self.attack_event(host, "discarded the agent".into());
                outcome = AfterAttack::Killed;
            }
            AttackKind::CloneAgent { copies } => {
                affected.push(Subject::Agent);
                let copies: Vec<Agent> = (0..*copies).map(|_| agent.clone()).collect();
                self.attack_event(host, format!("forwarded {} copies", copies.len()));
                outcome = AfterAttack::Cloned(copies);
            }
            AttackKind::MiddlemanKeySwap { target } => {
                affected.push(Subject::Provider {
                    provider: target.clone(),
                });
                self.middleman(host, target, agent, &mut affected)?;
            }
            AttackKind::StaleRecordReplay { target } => {
                affected.push(Subject::Provider {
                    provider: target.clone(),
                });
                let cert = self.keys.cert(target)?.clone();
                let replays = self.captured_records.get(host).cloned().unwrap_or_default();
                self.attack_event(
                    host,
                    format!("replaying {} old records of {target}", replays.len()),
                );
                for (idx, record, sig) in replays {
                    self.submit(idx, record, &sig, &cert, host);
                }
            }
            AttackKind::ColludingKeyTheft { partner } => {
                let bytes = agent.to_canonical();
                let found: Vec<KeyPair> = self
                    .keys
                    .keys
                    .values()
                    .chain(std::iter::once(&self.keys.ca))
                    .filter(|k| contains(&bytes, k.private.as_bytes()))
                    .cloned()
                    .collect();
                self.attack_event(
                    host,
                    format!(
                        "searched agent for key material, found {} private keys for {partner}",
                        found.len()
                    ),
                );
                self.stolen_keys.insert(partner.clone(), found);
            }
        }
        self.attacks.push(AttackRecord {
            host: host.clone(),
            kind: kind.name().to_string(),
            affected,
        });
        Ok(outcome)
    }

    /// Substitutes a rogue-CA certificate for `target`, re-forges its
    /// entries under the matching fake key and pushes a forged record to
    /// every route server.
    fn middleman(
        &mut self,
        host: &HostId,
        target: &HostId,
        agent: &mut Agent,
        affected: &mut Vec<Subject>,
    ) -> Result<(), SetupError> {
        let seed = self.cfg.seed;
        let fake = KeyPair::from_seed(
            target.clone(),
            &derive_seed(seed, &format!("middleman/{host}/{target}")),
        );
        let rogue = KeyPair::from_seed(
            host.clone(),
            &derive_seed(seed, &format!("rogue-ca/{host}")),
        );
        let fake_cert = ca_issue(&rogue.private, target.clone(), fake.public.clone())?;
        self.directory.publish(fake_cert.clone());
        let rng = ChaCha20Rng::from_seed(derive_seed(seed, &format!("middleman-rng/{host}")));
        let mut forger = Provider::new(fake.clone(), rng);

        let mut fields = Vec::new();
        let snapshot = agent.clone();
        for e in agent.data_area.iter_mut().filter(|e| &e.provider == target) {
            let msg = format!("forged offer {} from {target}", e.msg_index);
            let bound = forger.protect(e.mode(), &snapshot, msg.as_bytes())?;
            e.payload = bound.entry;
            fields.push(bound.fresh);
            affected.push(entry_subject(target, e.msg_index));
        }
        self.attack_event(
            host,
            format!(
                "published rogue certificate for {target} and forged {} entries",
                fields.len()
            ),
        );
        if fields.is_empty() {
            return Ok(());
        }
        let record = build_field_record(&fake, agent.id().clone(), fields)?;
        for idx in 0..self.registries.len() {
            if let Some(ch) = self.open_challenge(idx, target, agent.id()) {
                let sig = ch.respond(&fake.private)?;
                self.submit(idx, record.clone(), &sig, &fake_cert, host);
            }
        }
        Ok(())
    }

    /// The receiving half of a key theft: rewrites every entry it finds,
    /// signing with a stolen key where one exists and its own otherwise.
    fn collude(&mut self, host: &HostId, agent: &mut Agent) -> Result<(), SetupError> {
        let own = self.keys.key(host)?.clone();
        let stolen = self.stolen_keys.get(host).cloned().unwrap_or_default();
        let rng =
            ChaCha20Rng::from_seed(derive_seed(self.cfg.seed, &format!("collude-rng/{host}")));
        let mut forger = Provider::new(own.clone(), rng);
        let snapshot = agent.clone();
        let mut affected = Vec::new();
        for e in agent.data_area.iter_mut() {
            let key = stolen
                .iter()
                .find(|k| k.owner == e.provider)
                .unwrap_or(&own);
            if forger.keys() != key {
                forger = Provider::new(key.clone(), forger.rng().clone());
            }
            let msg = format!("forged offer {} from {}", e.msg_index, e.provider);
            e.payload = forger.protect(e.mode(), &snapshot, msg.as_bytes())?.entry;
            affected.push(entry_subject(&e.provider, e.msg_index));
        }
        self.attack_event(
            host,
            format!(
                "rewrote {} entries using {} stolen keys",
                affected.len(),
                stolen.len()
            ),
        );
        self.attacks.push(AttackRecord {
            host: host.clone(),
            kind: "colluding_partner".into(),
            affected,
        });
        Ok(())
    }

    fn kill_evidence(&self, agent: &AgentId) -> KillEvidence {
        let rs = &self.registries[0];
        let route = &self.cfg.route;
        let last = route.iter().rposition(|h| rs.query(agent, h).is_some());
        let suspect = route[last.map_or(0, |i| (i + 1).min(route.len() - 1))].clone();
        KillEvidence {
            last_registrant: last.map(|i| route[i].clone()),
            suspect,
        }
    }
}

fn position(agent: &Agent, provider: &HostId, index: u64) -> Option<usize> {
    agent
        .data_area
        .iter()
        .position(|e| &e.provider == provider && e.msg_index == index)
}

fn entry_subject(provider: &HostId, index: u64) -> Subject {
    Subject::Entry {
        provider: provider.clone(),
        index,
    }
}

fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}
